//! Stage runner. Each stage reads its inputs, writes its artifacts under
//! `workdir/<stage>/` and records input and output hashes in
//! `workdir/<stage>/manifest.json`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{all_candidates, generate_positives, sample_negatives, AlignmentConfig, DsLabel, RelationInstance, StageLabel};
use crate::annotation::{filter_instances, import_tsv, journal_path, AnnotationError, AnnotationStore, ImportReport, Journal};
use crate::classifier::{grid_search, train, ClassifierError, Model, TrainConfig, DEFAULT_NEG_WEIGHT_GRID};
use crate::confidence::{aggregate_patterns, ranked_queue, render_samples, write_queue_tsv, SdpPattern, DEFAULT_ALPHA, DEFAULT_SAMPLES};
use crate::corpus::{detect_mentions, load_corpus, load_kb, CorpusError, KnowledgeBase, ParsedSentence, SentenceKey};
use crate::evaluation::{
    evaluate, k_sweep, pr_curve, train_cell, write_pr_csv, write_pr_svg, write_sweep_tsv, EvalError, EvalRecord, EvalReport, GoldLabel,
    Prediction, SweepConfig, SweepData, SweepResult, DEFAULT_RESAMPLES,
};
use crate::features::{annotate_instance, DependencyGraph, FeatureConfig};
use crate::propagation::{assemble_training_set, PatternSpace, PropagationError, RankedPattern, Representation, Schedule, DEFAULT_K};
use crate::semantic::{load_embeddings, EmbeddingTable, Normalizer, SemanticError, DEFAULT_SVD_RANK};
use crate::synth::{parse_gold, synth_corpus, SynthError, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs the output of `{needs}`; run `slp {needs}` first ({path} is missing)")]
    MissingArtifact {
        stage: &'static str,
        needs: &'static str,
        path: PathBuf,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Artifact { path: PathBuf, line: usize, message: String },
}

impl PipelineError {
    /// 2 for problems with the user's inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingArtifact { .. }
            | PipelineError::Corpus(_)
            | PipelineError::Synth(_)
            | PipelineError::Classifier(_) => 2,
            PipelineError::Semantic(e) => match e {
                SemanticError::Io { .. } => 1,
                _ => 2,
            },
            PipelineError::Propagation(e) => match e {
                PropagationError::Semantic(_) => 1,
                _ => 2,
            },
            PipelineError::Eval(e) => match e {
                EvalError::UnknownInstance { .. } | EvalError::DuplicatePrediction { .. } => 2,
                _ => 1,
            },
            PipelineError::Annotation(e) => {
                if e.status() < 500 {
                    2
                } else {
                    1
                }
            }
            PipelineError::Io { .. } | PipelineError::Artifact { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub facts: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub titles: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub dev_gold: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub test_gold: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub collapse: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { collapse: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub alpha: f64,
    pub top_k: usize,
    pub samples: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        RankSection {
            alpha: DEFAULT_ALPHA,
            top_k: 100,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSection {
    pub primary_annotator: String,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        AnnotationSection {
            primary_annotator: "primary".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateSection {
    #[serde(rename = "K")]
    pub k_max: usize,
    pub representations: Vec<Representation>,
    pub svd_rank: usize,
    pub min_sim: Option<f64>,
    pub case_fold: bool,
}

impl Default for PropagateSection {
    fn default() -> Self {
        PropagateSection {
            k_max: DEFAULT_K,
            representations: Representation::ALL.to_vec(),
            svd_rank: DEFAULT_SVD_RANK,
            min_sim: None,
            case_fold: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub l2_lambda: f64,
    pub step: f64,
    pub epochs: usize,
    pub neg_weight: f64,
    pub neg_weight_grid: Vec<f64>,
    /// Training set used by `train`.
    pub k: usize,
    pub representation: Representation,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ClassifierSection {
            l2_lambda: t.l2_lambda,
            step: t.step,
            epochs: t.epochs,
            neg_weight: t.neg_weight,
            neg_weight_grid: DEFAULT_NEG_WEIGHT_GRID.to_vec(),
            k: 0,
            representation: Representation::Embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub resamples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            resamples: DEFAULT_RESAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workdir: Option<PathBuf>,
    pub paths: Paths,
    pub align: AlignSection,
    pub features: FeatureSection,
    pub rank: RankSection,
    pub annotation: AnnotationSection,
    pub propagate: PropagateSection,
    pub classifier: ClassifierSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub per_subject_cap: usize,
    pub negative_ratio: f64,
}

impl Default for AlignSection {
    fn default() -> Self {
        let a = AlignmentConfig::default();
        AlignSection {
            per_subject_cap: a.per_subject_cap,
            negative_ratio: a.negative_ratio,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 13,
            workdir: None,
            paths: Paths::default(),
            align: AlignSection::default(),
            features: FeatureSection::default(),
            rank: RankSection::default(),
            annotation: AnnotationSection::default(),
            propagate: PropagateSection::default(),
            classifier: ClassifierSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken from `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.resolve(base);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.corpus,
            &mut p.facts,
            &mut p.aliases,
            &mut p.schema,
            &mut p.embeddings,
            &mut p.stopwords,
            &mut p.titles,
            &mut p.journal,
            &mut p.dev_corpus,
            &mut p.dev_gold,
            &mut p.test_corpus,
            &mut p.test_gold,
        ] {
            fix(slot);
        }
        fix(&mut self.workdir);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.alignment().validate().map_err(PipelineError::Config)?;
        self.train_config().validate()?;
        if self.rank.alpha.is_nan() || self.rank.alpha <= 0.0 {
            return Err(PipelineError::Config("rank.alpha must be positive".into()));
        }
        if self.propagate.k_max == 0 {
            return Err(PipelineError::Config("propagate.K must be at least 1".into()));
        }
        if self.classifier.k > self.propagate.k_max {
            return Err(PipelineError::Config("classifier.k must not exceed propagate.K".into()));
        }
        if self.propagate.representations.is_empty() {
            return Err(PipelineError::Config("propagate.representations is empty".into()));
        }
        if self.classifier.neg_weight_grid.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(PipelineError::Config("neg_weight_grid values must be positive".into()));
        }
        Ok(())
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            per_subject_cap: self.align.per_subject_cap,
            negative_ratio: self.align.negative_ratio,
            rng_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            l2_lambda: self.classifier.l2_lambda,
            neg_weight: self.classifier.neg_weight,
            step: self.classifier.step,
            epochs: self.classifier.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub params: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Artifact {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_with<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

/// File-name form of a relation name.
pub fn safe_name(relation: &str) -> String {
    relation
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        StageReport {
            stage: stage.to_string(),
            summary: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub id: String,
    pub stage_label: StageLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub relation: String,
    pub representation: Representation,
    #[serde(flatten)]
    pub ranked: RankedPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub relation: String,
    pub file: String,
    pub threshold: f64,
    pub neg_weight: f64,
    pub dev_f1: Option<f64>,
    pub k: usize,
    pub representation: Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestComparison {
    pub relation: String,
    pub selected_k: usize,
    pub selected_representation: Representation,
    pub filtered: EvalRecord,
    pub selected: EvalRecord,
    pub distant: EvalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub results: Vec<SweepResult>,
    /// Per relation, then `MICRO`.
    pub test: Vec<TestComparison>,
}

/// Pattern rankings per relation and representation.
pub type Rankings = BTreeMap<String, BTreeMap<Representation, Vec<RankedPattern>>>;

type DevSets = BTreeMap<String, Vec<(Vec<String>, bool)>>;
type SweepInputs = (PathBuf, PathBuf, Vec<RelationInstance>, Rankings);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeldOut {
    Dev,
    Test,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub workdir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, workdir: PathBuf) -> Self {
        Pipeline { config, workdir }
    }

    fn stage_dir(&self, stage: &str) -> Result<PathBuf, PipelineError> {
        let dir = self.workdir.join(stage);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn artifact(&self, stage: &'static str, needs: &'static str, file: &str) -> Result<PathBuf, PipelineError> {
        let manifest = self.workdir.join(needs).join("manifest.json");
        let path = self.workdir.join(needs).join(file);
        if !manifest.exists() || !path.exists() {
            return Err(PipelineError::MissingArtifact {
                stage,
                needs,
                path: if manifest.exists() { path } else { manifest },
            });
        }
        Ok(path)
    }

    fn path(&self, name: &str, p: &Option<PathBuf>) -> Result<PathBuf, PipelineError> {
        let p = p
            .clone()
            .ok_or_else(|| PipelineError::Config(format!("paths.{name} is not set")))?;
        if !p.exists() {
            return Err(PipelineError::Config(format!("paths.{name}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    fn write_manifest(
        &self,
        stage: &str,
        inputs: &[(&str, &Path)],
        outputs: &[PathBuf],
        params: serde_json::Value,
    ) -> Result<(), PipelineError> {
        let dir = self.stage_dir(stage)?;
        let mut manifest = Manifest {
            stage: stage.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params,
        };
        for (name, p) in inputs {
            manifest.inputs.insert(name.to_string(), sha256_file(p)?);
        }
        for p in outputs {
            let rel = p.strip_prefix(&self.workdir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            manifest.outputs.insert(rel, sha256_file(p)?);
        }
        write_json(&dir.join("manifest.json"), &manifest)
    }

    fn corpus_path(&self) -> Result<PathBuf, PipelineError> {
        self.path("corpus", &self.config.paths.corpus)
    }

    fn kb_paths(&self) -> Result<[PathBuf; 3], PipelineError> {
        let p = &self.config.paths;
        Ok([self.path("facts", &p.facts)?, self.path("aliases", &p.aliases)?, self.path("schema", &p.schema)?])
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase, PipelineError> {
        let [f, a, s] = self.kb_paths()?;
        Ok(load_kb(&f, &a, &s)?)
    }

    fn kb_inputs(&self) -> Result<Vec<(&'static str, PathBuf)>, PipelineError> {
        let [f, a, s] = self.kb_paths()?;
        Ok(vec![("facts", f), ("aliases", a), ("schema", s)])
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, PipelineError> {
        let mut c = match &self.config.paths.titles {
            Some(p) => FeatureConfig::with_title_file(p).map_err(io_err(p))?,
            None => FeatureConfig::default(),
        };
        c.collapse = self.config.features.collapse;
        Ok(c)
    }

    fn normalizer(&self) -> Result<Normalizer, PipelineError> {
        let case_fold = self.config.propagate.case_fold;
        Ok(match &self.config.paths.stopwords {
            Some(p) => Normalizer::from_file(p, case_fold)?,
            None => Normalizer {
                case_fold,
                ..Normalizer::default()
            },
        })
    }

    pub fn journal(&self) -> Journal {
        let default = self
            .config
            .paths
            .journal
            .clone()
            .unwrap_or_else(|| self.workdir.join("annotation").join("journal.jsonl"));
        Journal::new(journal_path(&default))
    }

    pub fn ingest(&self) -> Result<StageReport, PipelineError> {
        let corpus_path = self.corpus_path()?;
        let corpus = load_corpus(&corpus_path)?;
        let kb = self.load_kb()?;
        let dir = self.stage_dir("ingest")?;
        let mentions: Vec<_> = corpus.par_iter().map(|s| detect_mentions(s, &kb.aliases)).collect();
        let flat: Vec<_> = mentions.into_iter().flatten().collect();
        let mentions_path = dir.join("mentions.jsonl");
        write_jsonl(&mentions_path, &flat)?;
        let mut report = StageReport::new("ingest");
        report.set("sentences", corpus.len());
        report.set("tokens", corpus.iter().map(|s| s.len()).sum::<usize>());
        report.set("mentions", flat.len());
        report.set("facts", kb.facts.len());
        report.set("relations", kb.schema.len());
        if flat.is_empty() {
            report.warn("no entity mention matched the alias table".into());
        }
        let summary_path = dir.join("summary.json");
        write_json(&summary_path, &report.summary)?;
        let mut inputs = vec![("corpus", corpus_path.as_path())];
        let kb_inputs = self.kb_inputs()?;
        inputs.extend(kb_inputs.iter().map(|(n, p)| (*n, p.as_path())));
        self.write_manifest("ingest", &inputs, &[mentions_path, summary_path], serde_json::json!({}))?;
        Ok(report)
    }

    pub fn align(&self) -> Result<StageReport, PipelineError> {
        let ingest = self.artifact("align", "ingest", "manifest.json")?;
        let corpus_path = self.corpus_path()?;
        let corpus = load_corpus(&corpus_path)?;
        let kb = self.load_kb()?;
        let config = self.config.alignment();
        let positives = generate_positives(&corpus, &kb, &config);
        let negatives = sample_negatives(&corpus, &kb, &positives, &config);
        let mut report = StageReport::new("align");
        for r in kb.schema.relations() {
            let p = positives.iter().filter(|i| i.relation == r.name).count();
            let n = negatives.iter().filter(|i| i.relation == r.name).count();
            report.set(&format!("{}.positives", r.name), p);
            report.set(&format!("{}.negatives", r.name), n);
            if p == 0 {
                report.warn(format!("relation `{}` has no positive instance", r.name));
            }
        }
        let dir = self.stage_dir("align")?;
        let out = dir.join("instances.jsonl");
        let all: Vec<RelationInstance> = positives.into_iter().chain(negatives).collect();
        write_jsonl(&out, &all)?;
        let mut inputs = vec![("corpus", corpus_path.as_path()), ("ingest", ingest.as_path())];
        let kb_inputs = self.kb_inputs()?;
        inputs.extend(kb_inputs.iter().map(|(n, p)| (*n, p.as_path())));
        self.write_manifest("align", &inputs, &[out], serde_json::to_value(&config).expect("serializable"))?;
        Ok(report)
    }

    pub fn features(&self) -> Result<StageReport, PipelineError> {
        let input = self.artifact("features", "align", "instances.jsonl")?;
        let corpus_path = self.corpus_path()?;
        let corpus = load_corpus(&corpus_path)?;
        let mut instances: Vec<RelationInstance> = read_jsonl(&input)?;
        let fc = self.feature_config()?;
        let dropped = annotate_instances(&mut instances, &corpus, &fc);
        let mut report = StageReport::new("features");
        report.set("instances", instances.len());
        report.set("dropped", dropped);
        if dropped > 0 {
            report.warn(format!("{dropped} instances have no dependency path and were dropped"));
        }
        let dir = self.stage_dir("features")?;
        let out = dir.join("instances.jsonl");
        write_jsonl(&out, &instances)?;
        self.write_manifest(
            "features",
            &[("corpus", &corpus_path), ("align", &input)],
            &[out],
            serde_json::json!({ "collapse": fc.collapse }),
        )?;
        Ok(report)
    }

    pub fn rank(&self) -> Result<StageReport, PipelineError> {
        let input = self.artifact("rank", "features", "instances.jsonl")?;
        let corpus_path = self.corpus_path()?;
        let corpus = load_corpus(&corpus_path)?;
        let instances: Vec<RelationInstance> = read_jsonl(&input)?;
        let index: BTreeMap<SentenceKey, &ParsedSentence> = corpus.iter().map(|s| (s.key(), s)).collect();
        let rc = &self.config.rank;
        let relations: BTreeSet<&str> = instances.iter().map(|i| i.relation.as_str()).collect();
        let dir = self.stage_dir("rank")?;
        let mut outputs = Vec::new();
        let mut queues: BTreeMap<String, Vec<SdpPattern>> = BTreeMap::new();
        let mut report = StageReport::new("rank");
        for rel in relations {
            let patterns = aggregate_patterns(&instances, rel, rc.alpha, rc.samples);
            let mut full = ranked_queue(patterns, usize::MAX);
            render_samples(&mut full, &index);
            let tsv = dir.join(format!("queue_{}.tsv", safe_name(rel)));
            let top = &full[..full.len().min(rc.top_k)];
            write_with(&tsv, |b| write_queue_tsv(b, top, rc.samples))?;
            outputs.push(tsv);
            report.set(&format!("{rel}.patterns"), full.len());
            queues.insert(rel.to_string(), full);
        }
        let patterns_path = dir.join("patterns.json");
        write_json(&patterns_path, &queues)?;
        outputs.push(patterns_path);
        self.write_manifest(
            "rank",
            &[("corpus", &corpus_path), ("features", &input)],
            &outputs,
            serde_json::json!({ "alpha": rc.alpha, "top_k": rc.top_k, "samples": rc.samples }),
        )?;
        Ok(report)
    }

    /// Opens the annotation store over the ranked patterns and the journal.
    pub fn annotation_store(&self, stage: &'static str) -> Result<AnnotationStore, PipelineError> {
        let patterns = self.artifact(stage, "rank", "patterns.json")?;
        let queues: BTreeMap<String, Vec<SdpPattern>> = read_json(&patterns)?;
        let journal = self.journal();
        if let Some(parent) = journal.path().parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(AnnotationStore::open(queues, journal, &self.config.annotation.primary_annotator)?)
    }

    pub fn import(&self, file: &Path, relation: &str, annotator: Option<&str>, session: &str) -> Result<ImportReport, PipelineError> {
        let mut store = self.annotation_store("import")?;
        let annotator = annotator.unwrap_or(&self.config.annotation.primary_annotator).to_string();
        let report = import_tsv(&mut store, file, relation, &annotator, session)?;
        self.write_annotation_manifest(&store)?;
        Ok(report)
    }

    pub fn write_annotation_manifest(&self, store: &AnnotationStore) -> Result<(), PipelineError> {
        let journal = store.journal().path().to_path_buf();
        let dir = self.stage_dir("annotation")?;
        let summary = dir.join("verdicts.json");
        let primary = store.primary_annotator().to_string();
        let mut accepted: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (rel, _) in store.relations() {
            accepted.insert(rel.clone(), store.state().accepted(rel, &primary).into_iter().collect());
        }
        write_json(&summary, &accepted)?;
        let mut inputs = Vec::new();
        if journal.exists() {
            inputs.push(("journal", journal.as_path()));
        }
        self.write_manifest("annotation", &inputs, &[summary], serde_json::json!({ "primary_annotator": primary }))
    }

    pub fn filter(&self) -> Result<StageReport, PipelineError> {
        let input = self.artifact("filter", "features", "instances.jsonl")?;
        let store = self.annotation_store("filter")?;
        let mut instances: Vec<RelationInstance> = read_jsonl(&input)?;
        let primary = store.primary_annotator().to_string();
        let mut report = StageReport::new("filter");
        let mut any_verdict = false;
        let relations: BTreeSet<String> = instances.iter().map(|i| i.relation.clone()).collect();
        for rel in &relations {
            let accepted: HashSet<String> = store.state().accepted(rel, &primary);
            any_verdict |= !store.state().verdicts(rel, &primary).is_empty();
            let mut group: Vec<RelationInstance> = instances.iter().filter(|i| &i.relation == rel).cloned().collect();
            filter_instances(&mut group, &accepted);
            let kept = group.iter().filter(|i| i.stage_label == StageLabel::Kept).count();
            let discarded = group.iter().filter(|i| i.stage_label == StageLabel::Discarded).count();
            report.set(&format!("{rel}.kept"), kept);
            report.set(&format!("{rel}.discarded"), discarded);
            let by_id: HashMap<String, StageLabel> = group.into_iter().map(|i| (i.id, i.stage_label)).collect();
            for i in instances.iter_mut().filter(|i| &i.relation == rel) {
                i.stage_label = by_id[&i.id];
            }
        }
        if !any_verdict {
            report.warn("no verdicts recorded yet: every positive is DISCARDED".into());
        }
        let dir = self.stage_dir("filter")?;
        let out = dir.join("instances.jsonl");
        write_jsonl(&out, &instances)?;
        self.write_annotation_manifest(&store)?;
        let verdicts = self.workdir.join("annotation").join("verdicts.json");
        self.write_manifest(
            "filter",
            &[("features", &input), ("verdicts", &verdicts)],
            &[out],
            serde_json::json!({ "primary_annotator": primary }),
        )?;
        Ok(report)
    }

    fn embedding_table(&self) -> Result<Option<EmbeddingTable>, PipelineError> {
        if !self.config.propagate.representations.contains(&Representation::Embedding) {
            return Ok(None);
        }
        let path = self.path("embeddings", &self.config.paths.embeddings)?;
        let mut table = load_embeddings(&path, None)?;
        let normalizer = self.normalizer()?;
        if normalizer.case_fold != table.normalizer.case_fold {
            // Reload so the stored keys follow the configured folding.
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            table = EmbeddingTable::parse(&text, normalizer)?;
        } else {
            table.normalizer = normalizer;
        }
        Ok(Some(table))
    }

    /// Rankings per relation and representation over the filter output.
    pub fn rankings(
        &self,
        instances: &[RelationInstance],
        report: &mut StageReport,
    ) -> Result<Rankings, PipelineError> {
        let table = self.embedding_table()?;
        let normalizer = self.normalizer()?;
        let pc = &self.config.propagate;
        let mut out = BTreeMap::new();
        let relations: BTreeSet<&str> = instances.iter().map(|i| i.relation.as_str()).collect();
        for rel in relations {
            let positives: Vec<&RelationInstance> = instances
                .iter()
                .filter(|i| i.relation == rel && i.ds_label == DsLabel::Positive)
                .collect();
            let accepted: BTreeSet<String> = positives
                .iter()
                .filter(|i| i.stage_label == StageLabel::Kept)
                .map(|i| i.pattern.clone())
                .collect();
            let mut candidates: BTreeMap<String, usize> = BTreeMap::new();
            for i in positives.iter().filter(|i| i.stage_label == StageLabel::Discarded) {
                *candidates.entry(i.pattern.clone()).or_default() += 1;
            }
            let mut per_repr = BTreeMap::new();
            for &repr in &pc.representations {
                let space = PatternSpace::build(
                    positives.iter().map(|i| i.pattern.as_str()),
                    repr,
                    &normalizer,
                    table.as_ref(),
                    pc.svd_rank,
                )?;
                match space.rank(&accepted, &candidates, pc.min_sim) {
                    Ok(r) => {
                        per_repr.insert(repr, r);
                    }
                    Err(PropagationError::Unavailable(msg)) => {
                        report.warn(format!("`{rel}` ({repr}): {msg}; only filtering applies"));
                        per_repr.insert(repr, Vec::new());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            out.insert(rel.to_string(), per_repr);
        }
        Ok(out)
    }

    pub fn propagate(&self, only_k: Option<usize>) -> Result<StageReport, PipelineError> {
        let input = self.artifact("propagate", "filter", "instances.jsonl")?;
        let instances: Vec<RelationInstance> = read_jsonl(&input)?;
        let k_max = self.config.propagate.k_max;
        if let Some(k) = only_k {
            if k > k_max {
                return Err(PipelineError::Config(format!("--k {k} exceeds K = {k_max}")));
            }
        }
        let mut report = StageReport::new("propagate");
        let rankings = self.rankings(&instances, &mut report)?;
        let dir = self.stage_dir("propagate")?;
        let mut outputs = Vec::new();
        let rows: Vec<RankingRow> = rankings
            .iter()
            .flat_map(|(rel, per)| {
                per.iter().flat_map(move |(repr, ranked)| {
                    ranked.iter().map(move |r| RankingRow {
                        relation: rel.clone(),
                        representation: *repr,
                        ranked: r.clone(),
                    })
                })
            })
            .collect();
        let rankings_path = dir.join("rankings.jsonl");
        write_jsonl(&rankings_path, &rows)?;
        outputs.push(rankings_path);

        for (rel, per) in &rankings {
            let kept: Vec<RelationInstance> = instances
                .iter()
                .filter(|i| &i.relation == rel && i.stage_label == StageLabel::Kept)
                .cloned()
                .collect();
            let discarded: Vec<RelationInstance> = instances
                .iter()
                .filter(|i| &i.relation == rel && i.stage_label == StageLabel::Discarded)
                .cloned()
                .collect();
            if kept.is_empty() {
                report.warn(format!("`{rel}` has no KEPT instance; no training sets written"));
                continue;
            }
            for (repr, ranked) in per {
                let sub = dir.join(safe_name(rel)).join(repr.as_str());
                fs::create_dir_all(&sub).map_err(io_err(&sub))?;
                let ks: Vec<usize> = match only_k {
                    Some(k) => vec![k],
                    None => (0..=k_max).collect(),
                };
                for k in ks {
                    let schedule = Schedule::new(kept.len(), kept.len() + discarded.len(), k_max, k)?;
                    let set = assemble_training_set(&kept, &discarded, ranked, &schedule);
                    let rows: Vec<TrainingRow> = set
                        .iter()
                        .map(|i| TrainingRow {
                            id: i.id.clone(),
                            stage_label: i.stage_label,
                        })
                        .collect();
                    let path = sub.join(format!("k{k}.jsonl"));
                    write_jsonl(&path, &rows)?;
                    outputs.push(path);
                    report.set(&format!("{rel}.{repr}.k{k}"), rows.len());
                }
            }
        }
        let mut inputs: Vec<(&str, PathBuf)> = vec![("filter", input.clone())];
        if let Some(p) = &self.config.paths.embeddings {
            if self.config.propagate.representations.contains(&Representation::Embedding) {
                inputs.push(("embeddings", p.clone()));
            }
        }
        if let Some(p) = &self.config.paths.stopwords {
            inputs.push(("stopwords", p.clone()));
        }
        let inputs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
        self.write_manifest(
            "propagate",
            &inputs,
            &outputs,
            serde_json::to_value(&self.config.propagate).expect("serializable"),
        )?;
        Ok(report)
    }

    /// Candidates of a held-out corpus with features and gold labels.
    pub fn held_out(&self, which: HeldOut) -> Result<(Vec<RelationInstance>, Vec<GoldLabel>), PipelineError> {
        let p = &self.config.paths;
        let (corpus_p, gold_p, name) = match which {
            HeldOut::Dev => (&p.dev_corpus, &p.dev_gold, "dev"),
            HeldOut::Test => (&p.test_corpus, &p.test_gold, "test"),
        };
        let corpus_path = self.path(&format!("{name}_corpus"), corpus_p)?;
        let gold_path = self.path(&format!("{name}_gold"), gold_p)?;
        let corpus = load_corpus(&corpus_path)?;
        let kb = self.load_kb()?;
        let mut instances = all_candidates(&corpus, &kb);
        annotate_instances(&mut instances, &corpus, &self.feature_config()?);
        let text = fs::read_to_string(&gold_path).map_err(io_err(&gold_path))?;
        let gold = parse_gold(&text).map_err(|m| PipelineError::Config(format!("{}: {m}", gold_path.display())))?;
        Ok((instances, gold))
    }

    /// Dev examples per relation, labelled from gold; unlabelled candidates
    /// are skipped.
    fn dev_sets(&self) -> Result<Option<DevSets>, PipelineError> {
        if self.config.paths.dev_corpus.is_none() {
            return Ok(None);
        }
        let (instances, gold) = self.held_out(HeldOut::Dev)?;
        let labels: HashMap<(&str, &str), bool> = gold
            .iter()
            .map(|g| ((g.relation.as_str(), g.instance_id.as_str()), g.label))
            .collect();
        let mut out: BTreeMap<String, Vec<(Vec<String>, bool)>> = BTreeMap::new();
        let mut skipped = 0;
        for i in instances {
            match labels.get(&(i.relation.as_str(), i.id.as_str())) {
                Some(&l) => out.entry(i.relation.clone()).or_default().push((i.features, l)),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} dev candidates have no gold label and are ignored");
        }
        Ok(Some(out))
    }

    fn sweep_inputs(&self, stage: &'static str) -> Result<SweepInputs, PipelineError> {
        let filter = self.artifact(stage, "filter", "instances.jsonl")?;
        let rankings_path = self.artifact(stage, "propagate", "rankings.jsonl")?;
        let instances: Vec<RelationInstance> = read_jsonl(&filter)?;
        let rows: Vec<RankingRow> = read_jsonl(&rankings_path)?;
        let mut rankings: Rankings = BTreeMap::new();
        for rel in instances.iter().map(|i| &i.relation) {
            if !rankings.contains_key(rel) {
                let per = self
                    .config
                    .propagate
                    .representations
                    .iter()
                    .map(|r| (*r, Vec::new()))
                    .collect();
                rankings.insert(rel.clone(), per);
            }
        }
        for row in rows {
            rankings
                .entry(row.relation)
                .or_default()
                .entry(row.representation)
                .or_default()
                .push(row.ranked);
        }
        Ok((filter, rankings_path, instances, rankings))
    }

    pub fn train(&self, k: Option<usize>, repr: Option<Representation>) -> Result<StageReport, PipelineError> {
        let k = k.unwrap_or(self.config.classifier.k);
        let repr = repr.unwrap_or(self.config.classifier.representation);
        let filter = self.artifact("train", "filter", "instances.jsonl")?;
        let instances: Vec<RelationInstance> = read_jsonl(&filter)?;
        let by_id: HashMap<&str, &RelationInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
        let dev = self.dev_sets()?;
        let base = self.config.train_config();
        let dir = self.stage_dir("train")?;
        let models_dir = dir.join("models");
        fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
        let mut report = StageReport::new("train");
        let mut entries = Vec::new();
        let mut outputs = Vec::new();
        let mut inputs = vec![("filter".to_string(), filter.clone())];
        let relations: BTreeSet<&str> = instances.iter().map(|i| i.relation.as_str()).collect();
        for rel in relations {
            let set_path = self.workdir.join("propagate").join(safe_name(rel)).join(repr.as_str()).join(format!("k{k}.jsonl"));
            if !set_path.exists() {
                report.warn(format!("no training set for `{rel}` at k={k} ({repr}); run `slp propagate` first"));
                continue;
            }
            let rows: Vec<TrainingRow> = read_jsonl(&set_path)?;
            let positives: Vec<&RelationInstance> = rows
                .iter()
                .map(|r| {
                    by_id.get(r.id.as_str()).copied().ok_or_else(|| PipelineError::Artifact {
                        path: set_path.clone(),
                        line: 0,
                        message: format!("unknown instance `{}`; re-run propagate", r.id),
                    })
                })
                .collect::<Result<_, _>>()?;
            let negatives = instances.iter().filter(|i| i.relation == rel && i.ds_label == DsLabel::Negative);
            let data = crate::evaluation::training_data(positives.iter().copied(), negatives);
            let (model, threshold, dev_f1) = match dev.as_ref().and_then(|d| d.get(rel)) {
                Some(dev) if !self.config.classifier.neg_weight_grid.is_empty() => {
                    let (m, sweep, grid) = grid_search(rel, &data, dev, &base, &self.config.classifier.neg_weight_grid)?;
                    report.set(&format!("{rel}.grid"), &grid);
                    (m, sweep.best.threshold, Some(sweep.best.f1))
                }
                _ => (train(rel, &data, &base)?, 0.5, None),
            };
            let file = format!("{}.json", safe_name(rel));
            let model_path = models_dir.join(&file);
            write_json(&model_path, &model)?;
            outputs.push(model_path);
            inputs.push((format!("set:{rel}"), set_path));
            entries.push(ModelEntry {
                relation: rel.to_string(),
                file,
                threshold,
                neg_weight: model.config.neg_weight,
                dev_f1,
                k,
                representation: repr,
            });
        }
        let index = dir.join("models.json");
        write_json(&index, &entries)?;
        outputs.push(index);
        report.set("models", entries.len());
        let inputs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();
        self.write_manifest(
            "train",
            &inputs,
            &outputs,
            serde_json::json!({ "k": k, "representation": repr, "classifier": self.config.classifier }),
        )?;
        Ok(report)
    }

    pub fn eval(&self) -> Result<EvalReport, PipelineError> {
        let index = self.artifact("eval", "train", "models.json")?;
        let entries: Vec<ModelEntry> = read_json(&index)?;
        let (instances, gold) = self.held_out(HeldOut::Test)?;
        let dir = self.stage_dir("eval")?;
        let mut predictions = Vec::new();
        let mut outputs = Vec::new();
        for e in &entries {
            let model: Model = read_json(&self.workdir.join("train").join("models").join(&e.file))?;
            let labels: HashMap<&str, bool> = gold
                .iter()
                .filter(|g| g.relation == e.relation)
                .map(|g| (g.instance_id.as_str(), g.label))
                .collect();
            let mut scored = Vec::new();
            for i in instances.iter().filter(|i| i.relation == e.relation) {
                let p = model.predict_proba(&i.features);
                predictions.push(Prediction {
                    relation: e.relation.clone(),
                    instance_id: i.id.clone(),
                    positive: p >= e.threshold,
                });
                if let Some(&l) = labels.get(i.id.as_str()) {
                    scored.push((p, l));
                }
            }
            if scored.iter().any(|(_, l)| *l) {
                let curve = pr_curve(&scored);
                let csv = dir.join(format!("pr_{}.csv", safe_name(&e.relation)));
                let svg = dir.join(format!("pr_{}.svg", safe_name(&e.relation)));
                write_with(&csv, |b| write_pr_csv(b, &curve))?;
                write_with(&svg, |b| write_pr_svg(b, &e.relation, &curve))?;
                outputs.extend([csv, svg]);
            }
        }
        let trained: HashSet<&str> = entries.iter().map(|e| e.relation.as_str()).collect();
        let gold: Vec<GoldLabel> = gold.into_iter().filter(|g| trained.contains(g.relation.as_str())).collect();
        let report = evaluate(&predictions, &gold)?;
        let tsv = dir.join("eval.tsv");
        write_with(&tsv, |b| report.write_tsv(b))?;
        let json = dir.join("report.json");
        write_json(&json, &report)?;
        outputs.extend([tsv, json]);
        let p = &self.config.paths;
        let test_corpus = p.test_corpus.clone().expect("checked by held_out");
        let test_gold = p.test_gold.clone().expect("checked by held_out");
        self.write_manifest(
            "eval",
            &[("train", &index), ("test_corpus", &test_corpus), ("test_gold", &test_gold)],
            &outputs,
            serde_json::json!({}),
        )?;
        Ok(report)
    }

    pub fn sweep(&self) -> Result<SweepOutput, PipelineError> {
        let (filter, rankings_path, instances, rankings) = self.sweep_inputs("sweep")?;
        let dev = self
            .dev_sets()?
            .ok_or_else(|| PipelineError::Config("sweep needs paths.dev_corpus and paths.dev_gold".into()))?;
        let test = if self.config.paths.test_corpus.is_some() {
            Some(self.held_out(HeldOut::Test)?)
        } else {
            None
        };
        let config = SweepConfig {
            k_max: self.config.propagate.k_max,
            resamples: self.config.sweep.resamples,
            train: self.config.train_config(),
            seed: self.config.seed,
        };
        let mut results = Vec::new();
        let mut comparisons = Vec::new();
        let mut preds: [Vec<Prediction>; 3] = Default::default();
        let mut used_gold = Vec::new();
        let empty = Vec::new();
        for (rel, per) in &rankings {
            let pick = |label: StageLabel| -> Vec<RelationInstance> {
                instances
                    .iter()
                    .filter(|i| &i.relation == rel && i.stage_label == label)
                    .cloned()
                    .collect()
            };
            let kept = pick(StageLabel::Kept);
            let discarded = pick(StageLabel::Discarded);
            let negatives = pick(StageLabel::Untouched);
            let dev_set = dev.get(rel).unwrap_or(&empty);
            if kept.is_empty() || negatives.is_empty() || !dev_set.iter().any(|(_, l)| *l) {
                log::warn!("skipping `{rel}` in the sweep: needs KEPT instances, negatives and positive dev examples");
                continue;
            }
            let data = SweepData {
                relation: rel,
                kept: &kept,
                discarded: &discarded,
                negatives: &negatives,
                rankings: per,
                dev: dev_set,
            };
            let result = k_sweep(&data, &config)?;
            if let Some((test_instances, gold)) = &test {
                let cells = [
                    (result.selected_representation, 0),
                    (result.selected_representation, result.selected_k),
                    (result.selected_representation, config.k_max),
                ];
                let mut records = Vec::new();
                let rel_gold: Vec<GoldLabel> = gold.iter().filter(|g| &g.relation == rel).cloned().collect();
                for (slot, (repr, k)) in cells.into_iter().enumerate() {
                    let (model, threshold) = train_cell(&data, repr, k, &config)?;
                    let p: Vec<Prediction> = test_instances
                        .iter()
                        .filter(|i| &i.relation == rel)
                        .map(|i| Prediction {
                            relation: rel.clone(),
                            instance_id: i.id.clone(),
                            positive: model.predict_proba(&i.features) >= threshold,
                        })
                        .collect();
                    let rep = evaluate(&p, &rel_gold)?;
                    records.push(rep.micro.clone());
                    preds[slot].extend(p);
                }
                used_gold.extend(rel_gold);
                let named = |mut r: EvalRecord| {
                    r.relation = rel.clone();
                    r
                };
                comparisons.push(TestComparison {
                    relation: rel.clone(),
                    selected_k: result.selected_k,
                    selected_representation: result.selected_representation,
                    filtered: named(records[0].clone()),
                    selected: named(records[1].clone()),
                    distant: named(records[2].clone()),
                });
            }
            results.push(result);
        }
        if !comparisons.is_empty() {
            let micro = |p: &[Prediction]| evaluate(p, &used_gold).map(|r| r.micro);
            comparisons.push(TestComparison {
                relation: crate::evaluation::MICRO.to_string(),
                selected_k: 0,
                selected_representation: Representation::Embedding,
                filtered: micro(&preds[0])?,
                selected: micro(&preds[1])?,
                distant: micro(&preds[2])?,
            });
        }
        let out = SweepOutput {
            results,
            test: comparisons,
        };
        let dir = self.stage_dir("sweep")?;
        let tsv = dir.join("sweep.tsv");
        write_with(&tsv, |b| write_sweep_tsv(b, &out.results))?;
        let json = dir.join("sweep.json");
        write_json(&json, &out)?;
        let mut outputs = vec![tsv, json];
        if !out.test.is_empty() {
            let cmp = dir.join("test_eval.tsv");
            write_with(&cmp, |b| {
                writeln!(b, "relation\tmodel\tk\trepresentation\tprecision\trecall\tf1")?;
                for c in &out.test {
                    for (name, k, r) in [
                        ("filtered", 0, &c.filtered),
                        ("selected", c.selected_k, &c.selected),
                        ("distant", config.k_max, &c.distant),
                    ] {
                        writeln!(
                            b,
                            "{}\t{name}\t{k}\t{}\t{:.4}\t{:.4}\t{:.4}",
                            c.relation, c.selected_representation, r.precision, r.recall, r.f1
                        )?;
                    }
                }
                Ok(())
            })?;
            outputs.push(cmp);
        }
        self.write_manifest(
            "sweep",
            &[("filter", &filter), ("rankings", &rankings_path)],
            &outputs,
            serde_json::to_value(config).expect("serializable"),
        )?;
        Ok(out)
    }
}

/// Fills SDPs and features; instances without a dependency path are removed.
/// Returns the number removed.
pub fn annotate_instances(instances: &mut Vec<RelationInstance>, corpus: &[ParsedSentence], config: &FeatureConfig) -> usize {
    let index: HashMap<SentenceKey, &ParsedSentence> = corpus.iter().map(|s| (s.key(), s)).collect();
    let before = instances.len();
    let done: Vec<Option<RelationInstance>> = std::mem::take(instances)
        .into_par_iter()
        .map(|mut inst| {
            let sentence = index.get(&inst.sentence_key())?;
            let graph = DependencyGraph::new(sentence);
            match annotate_instance(&mut inst, sentence, &graph, config) {
                Ok(()) => Some(inst),
                Err(e) => {
                    log::debug!("{}: {e}", inst.id);
                    None
                }
            }
        })
        .collect();
    *instances = done.into_iter().flatten().collect();
    before - instances.len()
}

/// Writes the synthetic corpus to `out` with a matching `config.toml`.
pub fn synth_to_dir(spec: &SynthSpec, out: &Path) -> Result<PipelineConfig, PipelineError> {
    let corpus = synth_corpus(spec)?;
    corpus.write(out)?;
    let config = PipelineConfig {
        seed: spec.seed,
        paths: Paths {
            corpus: Some("corpus.conll".into()),
            facts: Some("facts.tsv".into()),
            aliases: Some("aliases.tsv".into()),
            schema: Some("schema.tsv".into()),
            embeddings: spec.embeddings.as_ref().map(|_| "embeddings.txt".into()),
            dev_corpus: Some("dev.conll".into()),
            dev_gold: Some("dev_gold.tsv".into()),
            test_corpus: Some("test.conll".into()),
            test_gold: Some("test_gold.tsv".into()),
            ..Paths::default()
        },
        propagate: PropagateSection {
            representations: if spec.embeddings.is_some() {
                Representation::ALL.to_vec()
            } else {
                vec![Representation::Bow, Representation::Svd]
            },
            ..PropagateSection::default()
        },
        classifier: ClassifierSection {
            representation: if spec.embeddings.is_some() {
                Representation::Embedding
            } else {
                Representation::Bow
            },
            ..ClassifierSection::default()
        },
        ..PipelineConfig::default()
    };
    let text = toml::to_string_pretty(&config).map_err(|e| PipelineError::Config(e.to_string()))?;
    let path = out.join("config.toml");
    fs::write(&path, text).map_err(io_err(&path))?;
    PipelineConfig::load(&path)
}
