use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn slp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slp"))
        .current_dir(dir)
        .env_remove("SLP_JOURNAL")
        .args(args)
        .output()
        .expect("run slp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = slp(dir, args);
    assert!(
        out.status.success(),
        "slp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Marks `x` on the first `top` queue rows whose pattern is planted as true.
fn annotate(queue: &Path, patterns: &str, relation: &str, top: usize, out: &Path) {
    let truth: Vec<&str> = patterns
        .lines()
        .skip(1)
        .filter_map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c[0] == relation && c[1] == "true").then_some(c[3])
        })
        .collect();
    let text = fs::read_to_string(queue).unwrap();
    let rows: Vec<String> = text
        .lines()
        .enumerate()
        .take(top + 1)
        .map(|(i, l)| {
            let mut c: Vec<&str> = l.split('\t').collect();
            if i > 0 {
                *c.last_mut().unwrap() = if truth.contains(&c[4]) { "x" } else { "" };
            }
            c.join("\t")
        })
        .collect();
    fs::write(out, rows.join("\n") + "\n").unwrap();
}

#[test]
fn full_run_on_synthetic_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "data"]);
    assert!(d.join("data/config.toml").exists());
    let cfg = ["--config", "data/config.toml", "--workdir", "work"];
    let run = |stage: &[&str]| {
        let mut args = cfg.to_vec();
        args.extend_from_slice(stage);
        ok(d, &args)
    };

    run(&["ingest"]);
    run(&["align"]);
    let first = fs::read_to_string(d.join("work/align/manifest.json")).unwrap();
    run(&["align"]);
    assert_eq!(first, fs::read_to_string(d.join("work/align/manifest.json")).unwrap());

    run(&["features"]);
    run(&["rank"]);
    let patterns = fs::read_to_string(d.join("data/patterns.tsv")).unwrap();
    for rel in ["per:cities_of_residence", "org:founded_by"] {
        let safe = rel.replace(':', "_");
        let filled = d.join(format!("{safe}.tsv"));
        annotate(&d.join(format!("work/rank/queue_{safe}.tsv")), &patterns, rel, 5, &filled);
        let out = run(&["import", "--relation", rel, "--file", filled.to_str().unwrap()]);
        assert!(out.contains("accepted\t2"), "{out}");
    }
    assert!(d.join("work/annotation/journal.jsonl").exists());

    let filter = run(&["filter"]);
    assert!(filter.contains("\"per:cities_of_residence.kept\": 240"), "{filter}");
    run(&["propagate"]);
    assert!(d.join("work/propagate/org_founded_by/embedding/k10.jsonl").exists());
    run(&["train", "--k", "2", "--representation", "embedding"]);
    assert!(d.join("work/train/models/org_founded_by.json").exists());

    let eval = run(&["eval"]);
    let micro: Vec<&str> = eval.lines().find(|l| l.starts_with("MICRO")).unwrap().split('\t').collect();
    let f1: f64 = micro[6].parse().unwrap();
    assert!(f1 > 0.9, "{eval}");
    assert!(d.join("work/eval/pr_org_founded_by.svg").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // Stage prerequisites missing: validation error naming the stage.
    let out = slp(d, &["--workdir", "w", "features"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slp align"));

    fs::write(d.join("bad.toml"), "[rank]\nalpha = -1.0\n").unwrap();
    let out = slp(d, &["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));

    let out = slp(d, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slp(d, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
