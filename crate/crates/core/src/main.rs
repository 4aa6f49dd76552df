use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use slp::pipeline::{synth_to_dir, Pipeline, PipelineConfig, PipelineError};
use slp::propagation::Representation;
use slp::synth::SynthSpec;

#[derive(Parser)]
#[command(name = "slp", version, about = "Distant supervision relation extraction workbench")]
struct Cli {
    /// TOML configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding stage artifacts.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Keep NUMBER/DATE tokens verbatim instead of collapsing them.
    #[arg(long, global = true)]
    no_collapse: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load corpus and KB, detect entity mentions.
    Ingest,
    /// Distant-supervision alignment: positives and sampled negatives.
    Align,
    /// Shortest dependency paths and lexical features.
    Features,
    /// Pattern confidence and annotation queues.
    Rank,
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Import a filled-in queue spreadsheet as verdicts.
    Import {
        #[arg(long)]
        relation: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
        #[arg(long, default_value = "import")]
        session: String,
    },
    /// Split positives into KEPT and DISCARDED by the accepted patterns.
    Filter,
    /// Rank discarded patterns and write training sets for each k.
    Propagate {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one classifier per relation.
    Train {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        representation: Option<Representation>,
    },
    /// Evaluate trained models on the test set.
    Eval,
    /// Sweep k and representation on dev; compare on test.
    Sweep,
    /// Generate a synthetic corpus with known ground truth.
    Synth {
        /// JSON generator spec; the built-in fixture when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::Synth { spec, out } = &cli.command {
        let mut spec = match spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| PipelineError::Io { path: p.clone(), source })?;
                SynthSpec::from_json(&text)?
            }
            None => SynthSpec::fixture(),
        };
        if let Some(seed) = cli.seed {
            spec.seed = seed;
        }
        synth_to_dir(&spec, out)?;
        println!("wrote synthetic corpus to {}", out.display());
        return Ok(());
    }

    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.no_collapse {
        config.features.collapse = false;
    }
    let workdir = cli
        .workdir
        .clone()
        .or_else(|| config.workdir.clone())
        .unwrap_or_else(|| PathBuf::from("work"));
    let pipeline = Pipeline::new(config, workdir);

    match cli.command {
        Command::Ingest => print_json(&pipeline.ingest()?),
        Command::Align => print_json(&pipeline.align()?),
        Command::Features => print_json(&pipeline.features()?),
        Command::Rank => print_json(&pipeline.rank()?),
        Command::Serve { addr } => {
            let store = pipeline.annotation_store("serve")?;
            log::info!("journal at {}", store.journal().path().display());
            let runtime = tokio::runtime::Runtime::new().map_err(|source| PipelineError::Io {
                path: PathBuf::from("<runtime>"),
                source,
            })?;
            runtime
                .block_on(slp::server::serve(store, addr))
                .map_err(|source| PipelineError::Io {
                    path: PathBuf::from(addr.to_string()),
                    source,
                })?;
        }
        Command::Import {
            relation,
            file,
            annotator,
            session,
        } => {
            let r = pipeline.import(&file, &relation, annotator.as_deref(), &session)?;
            println!("events\t{}\naccepted\t{}\nwarnings\t{}", r.events, r.accepted, r.warnings);
        }
        Command::Filter => print_json(&pipeline.filter()?),
        Command::Propagate { k } => print_json(&pipeline.propagate(k)?),
        Command::Train { k, representation } => print_json(&pipeline.train(k, representation)?),
        Command::Eval => {
            let report = pipeline.eval()?;
            let mut out = std::io::stdout().lock();
            report
                .write_tsv(&mut out)
                .map_err(|source| PipelineError::Io { path: "<stdout>".into(), source })?;
        }
        Command::Sweep => {
            let out = pipeline.sweep()?;
            for r in &out.results {
                println!("{}\tselected k={} representation={}", r.relation, r.selected_k, r.selected_representation);
            }
            for c in &out.test {
                println!(
                    "{}\ttest F1 filtered={:.4} selected={:.4} distant={:.4}",
                    c.relation, c.filtered.f1, c.selected.f1, c.distant.f1
                );
            }
        }
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::try_parse() {
        Ok(cli) => match run(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}
