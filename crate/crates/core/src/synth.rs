//! Synthetic corpora with planted patterns, for experiments with known
//! ground truth.
//!
//! Every sentence instantiates one template parse with a subject and an
//! object entity. Sentences from `true_patterns` express the relation;
//! `noise_patterns` co-occur with fact pairs without expressing it;
//! `neutral_patterns` fill the negative pool with non-fact pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{instance_id, DsLabel, RelationInstance};
use crate::corpus::{span_head, write_corpus, EntityMention, EntityTag, ParsedSentence, Token};
use crate::evaluation::GoldLabel;
use crate::features::{annotate_instance, DependencyGraph, FeatureConfig};
use crate::semantic::Normalizer;

pub const FIXTURE_SPEC: &str = include_str!("../resources/synth_fixture.json");

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible spec for `{relation}`: {message}")]
    Infeasible { relation: String, message: String },
    #[error("template {index} of `{relation}`: {message}")]
    Template {
        relation: String,
        index: usize,
        message: String,
    },
    #[error("bad spec: {0}")]
    Spec(#[from] serde_json::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    /// Words, with `{S}` and `{O}` marking the subject and object slots.
    pub tokens: Vec<String>,
    /// 1-based heads within the template, 0 for the root.
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSynth {
    pub name: String,
    pub subject_type: EntityTag,
    pub object_type: EntityTag,
    /// Sentences whose entity pair is a KB fact.
    pub positives: usize,
    /// Share of `positives` drawn from `true_patterns`.
    pub true_positive_fraction: f64,
    /// Sentences with a non-fact pair.
    pub negatives: usize,
    pub subjects: usize,
    pub objects: usize,
    pub true_patterns: Vec<Template>,
    #[serde(default)]
    pub noise_patterns: Vec<Template>,
    #[serde(default)]
    pub neutral_patterns: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSynth {
    pub dim: usize,
    /// Cosine of every true-pattern word with its relation's direction.
    pub true_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    pub relations: Vec<RelationSynth>,
    /// Sentences per relation in each held-out split.
    #[serde(default)]
    pub dev_sentences: usize,
    #[serde(default)]
    pub test_sentences: usize,
    #[serde(default)]
    pub embeddings: Option<EmbeddingSynth>,
    /// Chance of a sentence-initial adverbial.
    #[serde(default = "filler_default")]
    pub filler_probability: f64,
}

fn filler_default() -> f64 {
    0.3
}

impl SynthSpec {
    pub fn fixture() -> Self {
        serde_json::from_str(FIXTURE_SPEC).expect("bundled synth spec parses")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternClass {
    True,
    Noise,
    Neutral,
}

impl PatternClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::True => "true",
            PatternClass::Noise => "noise",
            PatternClass::Neutral => "neutral",
        }
    }
}

/// Pattern key of one template, as feature extraction computes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedPattern {
    pub relation: String,
    pub class: PatternClass,
    pub template: usize,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceInfo {
    pub relation: String,
    pub class: PatternClass,
    pub template: usize,
    pub fact_pair: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub sentences: Vec<ParsedSentence>,
    pub info: Vec<SentenceInfo>,
    pub gold: Vec<GoldLabel>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Split,
    pub dev: Split,
    pub test: Split,
    /// `(relation, subject_id, object_id)`.
    pub facts: Vec<(String, String, String)>,
    /// `(kb_id, alias)`.
    pub aliases: Vec<(String, String)>,
    /// `(relation, subject_type, object_type)`.
    pub schema: Vec<(String, String, String)>,
    pub patterns: Vec<PlantedPattern>,
    pub embeddings: Vec<(String, Vec<f64>)>,
}

impl SynthCorpus {
    /// Realized share of gold-true sentences among fact-pair sentences of
    /// the training split.
    pub fn true_positive_fraction(&self, relation: &str) -> f64 {
        let pos: Vec<&SentenceInfo> = self
            .train
            .info
            .iter()
            .filter(|i| i.relation == relation && i.fact_pair)
            .collect();
        if pos.is_empty() {
            return 0.0;
        }
        pos.iter().filter(|i| i.class == PatternClass::True).count() as f64 / pos.len() as f64
    }

    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let write_file = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
            let mut buf = Vec::new();
            let path = dir.join(name);
            f(&mut buf).map_err(io(&path))?;
            fs::write(&path, buf).map_err(io(&path))
        };
        for (name, split) in [("corpus", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            write_file(&format!("{name}.conll"), &|b| write_corpus(b, &split.sentences))?;
            let gold_name = if name == "corpus" { "gold.tsv".to_string() } else { format!("{name}_gold.tsv") };
            write_file(&gold_name, &|b| write_gold(b, &split.gold))?;
        }
        write_file("facts.tsv", &|b| {
            self.facts.iter().try_for_each(|(r, s, o)| writeln!(b, "{r}\t{s}\t{o}"))
        })?;
        write_file("aliases.tsv", &|b| {
            self.aliases.iter().try_for_each(|(id, a)| writeln!(b, "{id}\t{a}"))
        })?;
        write_file("schema.tsv", &|b| {
            self.schema.iter().try_for_each(|(r, s, o)| writeln!(b, "{r}\t{s}\t{o}"))
        })?;
        write_file("patterns.tsv", &|b| {
            writeln!(b, "relation\tclass\ttemplate\tpattern")?;
            self.patterns
                .iter()
                .try_for_each(|p| writeln!(b, "{}\t{}\t{}\t{}", p.relation, p.class.as_str(), p.template, p.pattern))
        })?;
        if !self.embeddings.is_empty() {
            write_file("embeddings.txt", &|b| {
                self.embeddings.iter().try_for_each(|(w, v)| {
                    write!(b, "{w}")?;
                    for x in v {
                        write!(b, " {x:.6}")?;
                    }
                    writeln!(b)
                })
            })?;
        }
        Ok(())
    }
}

pub fn write_gold<W: Write>(out: &mut W, gold: &[GoldLabel]) -> std::io::Result<()> {
    for g in gold {
        writeln!(out, "{}\t{}\t{}", g.relation, g.instance_id, u8::from(g.label))?;
    }
    Ok(())
}

/// Parses `relation<TAB>instance_id<TAB>0|1` lines.
pub fn parse_gold(text: &str) -> Result<Vec<GoldLabel>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let label = match cols.as_slice() {
            [_, _, "1"] => true,
            [_, _, "0"] => false,
            _ => return Err(format!("line {}: expected `relation<TAB>instance_id<TAB>0|1`", i + 1)),
        };
        out.push(GoldLabel {
            relation: cols[0].to_string(),
            instance_id: cols[1].to_string(),
            label,
        });
    }
    Ok(out)
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "te", "vo", "su", "ne", "di", "po", "gu", "re", "ba", "shi", "tor", "an",
];

/// Distinct capitalised pseudo-word for every index.
fn pseudo_word(mut i: usize) -> String {
    let mut w = String::new();
    for _ in 0..4 {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    let mut c = w.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

#[derive(Debug, Clone)]
struct Entity {
    id: String,
    tokens: Vec<String>,
    tag: EntityTag,
}

struct Namer {
    next_word: usize,
    next_id: usize,
}

impl Namer {
    fn entity(&mut self, tag: EntityTag) -> Entity {
        let mut word = || {
            self.next_word += 1;
            pseudo_word(self.next_word * 7919 % 65_536)
        };
        let tokens = match tag {
            EntityTag::Person => vec![word(), word()],
            EntityTag::Organization => vec![word(), "Group".to_string()],
            _ => vec![word()],
        };
        self.next_id += 1;
        Entity {
            id: format!("E{:05}", self.next_id),
            tokens,
            tag,
        }
    }
}

const FILLERS: [&[(&str, &str, &str)]; 3] = [
    &[("Yesterday", "NN", "tmod"), (",", ",", "punct")],
    &[("On", "IN", "case"), ("Monday", "NNP", "prep_on"), (",", ",", "punct")],
    &[("Reportedly", "RB", "advmod"), (",", ",", "punct")],
];

fn slot(token: &str) -> Option<bool> {
    match token {
        "{S}" => Some(true),
        "{O}" => Some(false),
        _ => None,
    }
}

fn check_template(relation: &str, index: usize, t: &Template) -> Result<(), SynthError> {
    let err = |message: String| SynthError::Template {
        relation: relation.to_string(),
        index,
        message,
    };
    let n = t.tokens.len();
    if t.heads.len() != n || t.deprels.len() != n || t.pos.len() != n {
        return Err(err("tokens, heads, deprels and pos differ in length".into()));
    }
    if t.tokens.iter().filter(|w| *w == "{S}").count() != 1 || t.tokens.iter().filter(|w| *w == "{O}").count() != 1 {
        return Err(err("needs exactly one {S} and one {O}".into()));
    }
    if t.heads.iter().filter(|h| **h == 0).count() != 1 {
        return Err(err("needs exactly one root".into()));
    }
    if t.heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return Err(err("head out of range".into()));
    }
    if !(t.weight > 0.0 && t.weight.is_finite()) {
        return Err(err("weight must be positive".into()));
    }
    Ok(())
}

/// Builds one sentence. Returns it with the subject and object spans.
fn render(
    template: &Template,
    subject: &Entity,
    object: &Entity,
    filler: Option<usize>,
    doc_id: String,
    sentence_id: u64,
) -> (ParsedSentence, (usize, usize), (usize, usize)) {
    // Expand the slots, remembering where each template token lands.
    struct Pending {
        surface: String,
        pos: String,
        entity: EntityTag,
        head: Head,
        deprel: String,
    }
    #[derive(Clone, Copy)]
    enum Head {
        Template(usize),
        Absolute(usize),
        Root,
    }
    let prefix = filler.map(|f| FILLERS[f]).unwrap_or(&[]);
    let mut out: Vec<Pending> = Vec::new();
    let mut position = vec![0usize; template.tokens.len() + 1];
    let root_template = template.heads.iter().position(|&h| h == 0).expect("checked") + 1;
    for (w, p, d) in prefix {
        out.push(Pending {
            surface: w.to_string(),
            pos: p.to_string(),
            entity: EntityTag::None,
            head: Head::Template(root_template),
            deprel: d.to_string(),
        });
    }
    if prefix.len() == 3 {
        // `On` attaches to `Monday`.
        out[0].head = Head::Absolute(2);
    }
    let (mut subj_span, mut obj_span) = ((0, 0), (0, 0));
    for (i, tok) in template.tokens.iter().enumerate() {
        let head = match template.heads[i] {
            0 => Head::Root,
            h => Head::Template(h),
        };
        match slot(tok) {
            Some(is_subject) => {
                let e = if is_subject { subject } else { object };
                let first = out.len() + 1;
                let last = first + e.tokens.len() - 1;
                for (j, w) in e.tokens.iter().enumerate() {
                    let is_head = j + 1 == e.tokens.len();
                    out.push(Pending {
                        surface: w.clone(),
                        pos: "NNP".into(),
                        entity: e.tag,
                        head: if is_head { head } else { Head::Absolute(last) },
                        deprel: if is_head { template.deprels[i].clone() } else { "nn".into() },
                    });
                }
                position[i + 1] = last;
                if is_subject {
                    subj_span = (first, last);
                } else {
                    obj_span = (first, last);
                }
            }
            None => {
                out.push(Pending {
                    surface: tok.clone(),
                    pos: template.pos[i].clone(),
                    entity: EntityTag::None,
                    head,
                    deprel: template.deprels[i].clone(),
                });
                position[i + 1] = out.len();
            }
        }
    }
    out.push(Pending {
        surface: ".".into(),
        pos: ".".into(),
        entity: EntityTag::None,
        head: Head::Template(root_template),
        deprel: "punct".into(),
    });

    let tokens = out
        .into_iter()
        .enumerate()
        .map(|(i, p)| Token {
            index: i + 1,
            lemma: p.surface.to_lowercase(),
            surface: p.surface,
            pos: p.pos,
            entity: p.entity,
            head: match p.head {
                Head::Root => 0,
                Head::Absolute(a) => a,
                Head::Template(t) => position[t],
            },
            deprel: if matches!(p.head, Head::Root) { "root".into() } else { p.deprel },
        })
        .collect();
    (
        ParsedSentence {
            doc_id,
            sentence_id,
            tokens,
        },
        subj_span,
        obj_span,
    )
}

/// Splits `total` over `weights` by largest remainder.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

struct RelationPools {
    subjects: Vec<Entity>,
    objects: Vec<Entity>,
    /// Fact object index for each subject.
    fact_of: Vec<usize>,
}

fn mention(sentence: &ParsedSentence, span: (usize, usize), entity: &Entity) -> EntityMention {
    EntityMention {
        doc_id: sentence.doc_id.clone(),
        sentence_id: sentence.sentence_id,
        first: span.0,
        last: span.1,
        head: span_head(sentence, span.0, span.1),
        entity_type: entity.tag,
        kb_id: Some(entity.id.clone()),
    }
}

struct Plan<'a> {
    class: PatternClass,
    template_index: usize,
    template: &'a Template,
    fact_pair: bool,
}

fn plan_sentences<'a>(
    r: &'a RelationSynth,
    positives: usize,
    negatives: usize,
) -> Vec<Plan<'a>> {
    let n_true = (r.true_positive_fraction * positives as f64).round() as usize;
    let n_noise = positives - n_true;
    let mut plans = Vec::new();
    let mut add = |class, templates: &'a [Template], n: usize, fact_pair| {
        let counts = apportion(n, &templates.iter().map(|t| t.weight).collect::<Vec<_>>());
        for (i, (t, c)) in templates.iter().zip(counts).enumerate() {
            for _ in 0..c {
                plans.push(Plan {
                    class,
                    template_index: i,
                    template: t,
                    fact_pair,
                });
            }
        }
    };
    add(PatternClass::True, &r.true_patterns, n_true, true);
    if n_noise > 0 {
        add(PatternClass::Noise, &r.noise_patterns, n_noise, true);
    }
    if negatives > 0 {
        add(PatternClass::Neutral, &r.neutral_patterns, negatives, false);
    }
    plans
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    let mut names = BTreeSet::new();
    for r in &spec.relations {
        let fail = |message: &str| SynthError::Infeasible {
            relation: r.name.clone(),
            message: message.to_string(),
        };
        if !names.insert(&r.name) {
            return Err(fail("duplicate relation"));
        }
        if !(0.0..=1.0).contains(&r.true_positive_fraction) {
            return Err(fail("true_positive_fraction must lie in [0, 1]"));
        }
        let n_true = (r.true_positive_fraction * r.positives as f64).round() as usize;
        if n_true > 0 && r.true_patterns.is_empty() {
            return Err(fail("true positives requested but no true patterns given"));
        }
        if n_true < r.positives && r.noise_patterns.is_empty() {
            return Err(fail("fraction below 1 needs at least one noise pattern"));
        }
        let heldout = spec.dev_sentences.max(spec.test_sentences);
        if (r.negatives > 0 || heldout > 0) && r.neutral_patterns.is_empty() {
            return Err(fail("negative sentences need at least one neutral pattern"));
        }
        if r.subjects == 0 || r.objects < 2 {
            return Err(fail("needs at least one subject and two objects"));
        }
        if !r.subject_type.is_entity() || !r.object_type.is_entity() {
            return Err(fail("entity types must not be NONE"));
        }
        for (i, t) in r
            .true_patterns
            .iter()
            .chain(&r.noise_patterns)
            .chain(&r.neutral_patterns)
            .enumerate()
        {
            check_template(&r.name, i, t)?;
        }
    }
    if let Some(e) = &spec.embeddings {
        if e.dim < 2 || !(-1.0..=1.0).contains(&e.true_cosine) {
            return Err(SynthError::Infeasible {
                relation: String::new(),
                message: "embeddings need dim >= 2 and true_cosine in [-1, 1]".into(),
            });
        }
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `c·u + sqrt(1 - c²)·r` with `r` a random unit vector orthogonal to `u`.
fn at_cosine(rng: &mut ChaCha8Rng, u: &[f64], c: f64) -> Vec<f64> {
    let r = loop {
        let v = random_unit(rng, u.len());
        let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        let o: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - d * b).collect();
        let n = o.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            break o.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };
    let s = (1.0 - c * c).max(0.0).sqrt();
    u.iter().zip(&r).map(|(a, b)| c * a + s * b).collect()
}

fn synth_embeddings(spec: &SynthSpec, e: &EmbeddingSynth, rng: &mut ChaCha8Rng) -> Vec<(String, Vec<f64>)> {
    let normalizer = Normalizer::default();
    let words_of = |ts: &[Template]| -> Vec<String> {
        ts.iter()
            .flat_map(|t| t.tokens.iter())
            .filter(|w| slot(w).is_none())
            .map(|w| w.to_lowercase())
            .collect()
    };
    let mut assigned: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &spec.relations {
        let direction = random_unit(rng, e.dim);
        for w in words_of(&r.true_patterns) {
            if normalizer.is_stopword(&w) || assigned.contains_key(&w) {
                continue;
            }
            let v = at_cosine(rng, &direction, e.true_cosine);
            assigned.insert(w, v);
        }
    }
    let mut others: BTreeSet<String> = spec
        .relations
        .iter()
        .flat_map(|r| {
            words_of(&r.true_patterns)
                .into_iter()
                .chain(words_of(&r.noise_patterns))
                .chain(words_of(&r.neutral_patterns))
        })
        .collect();
    others.extend(FILLERS.iter().flat_map(|f| f.iter().map(|(w, _, _)| w.to_lowercase())));
    for w in others {
        assigned.entry(w).or_insert_with(|| random_unit(rng, e.dim));
    }
    assigned.into_iter().collect()
}

/// Generates the corpus, KB, held-out splits, planted pattern keys and
/// (optionally) word vectors for `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut namer = Namer {
        next_word: 0,
        next_id: 0,
    };
    let mut pools = Vec::new();
    let mut facts = Vec::new();
    let mut aliases = Vec::new();
    let mut schema = Vec::new();
    for r in &spec.relations {
        let subjects: Vec<Entity> = (0..r.subjects).map(|_| namer.entity(r.subject_type)).collect();
        let objects: Vec<Entity> = (0..r.objects).map(|_| namer.entity(r.object_type)).collect();
        let fact_of: Vec<usize> = (0..r.subjects).map(|_| rng.random_range(0..r.objects)).collect();
        for (s, &o) in subjects.iter().zip(&fact_of) {
            facts.push((r.name.clone(), s.id.clone(), objects[o].id.clone()));
        }
        for e in subjects.iter().chain(&objects) {
            aliases.push((e.id.clone(), e.tokens.join(" ").to_lowercase()));
        }
        schema.push((r.name.clone(), r.subject_type.as_str().to_string(), r.object_type.as_str().to_string()));
        pools.push(RelationPools {
            subjects,
            objects,
            fact_of,
        });
    }

    let total = |r: &RelationSynth| r.positives + r.negatives;
    let heldout_counts = |r: &RelationSynth, n: usize| {
        let pos = if total(r) == 0 { 0 } else { (n as f64 * r.positives as f64 / total(r) as f64).round() as usize };
        (pos, n - pos)
    };

    let feature_config = FeatureConfig::default();
    let mut patterns: BTreeMap<(String, PatternClass, usize), String> = BTreeMap::new();
    let mut make_split = |split: &str, counts: &dyn Fn(&RelationSynth) -> (usize, usize), rng: &mut ChaCha8Rng| -> Result<Split, SynthError> {
        let mut out = Split::default();
        for (ri, (r, pool)) in spec.relations.iter().zip(&pools).enumerate() {
            let (npos, nneg) = counts(r);
            let mut plans = plan_sentences(r, npos, nneg);
            // Fisher-Yates over the plan order.
            for i in (1..plans.len()).rev() {
                plans.swap(i, rng.random_range(0..=i));
            }
            for (n, plan) in plans.iter().enumerate() {
                let s_idx = rng.random_range(0..pool.subjects.len());
                let o_idx = if plan.fact_pair {
                    pool.fact_of[s_idx]
                } else {
                    loop {
                        let o = rng.random_range(0..pool.objects.len());
                        if o != pool.fact_of[s_idx] {
                            break o;
                        }
                    }
                };
                let filler = rng.random_bool(spec.filler_probability.clamp(0.0, 1.0)).then(|| rng.random_range(0..FILLERS.len()));
                let (sentence, s_span, o_span) = render(
                    plan.template,
                    &pool.subjects[s_idx],
                    &pool.objects[o_idx],
                    filler,
                    format!("{split}-{ri}-{:04}", n / 10),
                    (n % 10) as u64,
                );
                let subj = mention(&sentence, s_span, &pool.subjects[s_idx]);
                let obj = mention(&sentence, o_span, &pool.objects[o_idx]);
                let key = (r.name.clone(), plan.class, plan.template_index);
                if let std::collections::btree_map::Entry::Vacant(slot) = patterns.entry(key) {
                    let mut inst = RelationInstance::new(&r.name, subj.clone(), obj.clone(), DsLabel::Positive);
                    let graph = DependencyGraph::new(&sentence);
                    annotate_instance(&mut inst, &sentence, &graph, &feature_config).map_err(|e| SynthError::Template {
                        relation: r.name.clone(),
                        index: plan.template_index,
                        message: e.to_string(),
                    })?;
                    slot.insert(inst.pattern);
                }
                out.gold.push(GoldLabel {
                    relation: r.name.clone(),
                    instance_id: instance_id(&r.name, &subj, &obj),
                    label: plan.class == PatternClass::True,
                });
                out.info.push(SentenceInfo {
                    relation: r.name.clone(),
                    class: plan.class,
                    template: plan.template_index,
                    fact_pair: plan.fact_pair,
                });
                out.sentences.push(sentence);
            }
        }
        Ok(out)
    };
    let train = make_split("train", &|r| (r.positives, r.negatives), &mut rng)?;
    let dev = make_split("dev", &|r| heldout_counts(r, spec.dev_sentences), &mut rng)?;
    let test = make_split("test", &|r| heldout_counts(r, spec.test_sentences), &mut rng)?;

    let embeddings = match &spec.embeddings {
        Some(e) => synth_embeddings(spec, e, &mut rng),
        None => Vec::new(),
    };
    Ok(SynthCorpus {
        train,
        dev,
        test,
        facts,
        aliases,
        schema,
        patterns: patterns
            .into_iter()
            .map(|((relation, class, template), pattern)| PlantedPattern {
                relation,
                class,
                template,
                pattern,
            })
            .collect(),
        embeddings,
    })
}

/// Reads `patterns.tsv` back into `(relation, pattern) → class`.
pub fn parse_patterns(text: &str) -> BTreeMap<(String, String), PatternClass> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let c: Vec<&str> = l.splitn(4, '\t').collect();
            let class = match *c.get(1)? {
                "true" => PatternClass::True,
                "noise" => PatternClass::Noise,
                "neutral" => PatternClass::Neutral,
                _ => return None,
            };
            Some(((c[0].to_string(), c.get(3)?.to_string()), class))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{generate_positives, AlignmentConfig};
    use crate::corpus::{parse_aliases, parse_corpus, parse_facts, parse_schema, KnowledgeBase};

    fn template(tokens: &[&str], heads: &[usize], deprels: &[&str], pos: &[&str]) -> Template {
        Template {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            heads: heads.to_vec(),
            deprels: deprels.iter().map(|s| s.to_string()).collect(),
            pos: pos.iter().map(|s| s.to_string()).collect(),
            weight: 1.0,
        }
    }

    fn small_spec(fraction: f64, positives: usize) -> SynthSpec {
        SynthSpec {
            seed: 3,
            relations: vec![RelationSynth {
                name: "per:city_of_residence".into(),
                subject_type: EntityTag::Person,
                object_type: EntityTag::LocationCity,
                positives,
                true_positive_fraction: fraction,
                negatives: positives / 2,
                subjects: 400,
                objects: 50,
                true_patterns: vec![
                    template(&["{S}", "lives", "in", "{O}"], &[2, 0, 4, 2], &["nsubj", "root", "case", "prep_in"], &["NNP", "VBZ", "IN", "NNP"]),
                    template(&["{S}", "resides", "in", "{O}"], &[2, 0, 4, 2], &["nsubj", "root", "case", "prep_in"], &["NNP", "VBZ", "IN", "NNP"]),
                ],
                noise_patterns: vec![template(
                    &["{S}", "was", "born", "in", "{O}"],
                    &[3, 3, 0, 5, 3],
                    &["nsubjpass", "auxpass", "root", "case", "prep_in"],
                    &["NNP", "VBD", "VBN", "IN", "NNP"],
                )],
                neutral_patterns: vec![template(&["{S}", "flew", "to", "{O}"], &[2, 0, 4, 2], &["nsubj", "root", "case", "prep_to"], &["NNP", "VBD", "TO", "NNP"])],
            }],
            dev_sentences: 20,
            test_sentences: 20,
            embeddings: Some(EmbeddingSynth { dim: 8, true_cosine: 0.9 }),
            filler_probability: 0.3,
        }
    }

    #[test]
    fn realized_fraction_matches_spec() {
        let c = synth_corpus(&small_spec(0.6, 5000)).unwrap();
        let f = c.true_positive_fraction("per:city_of_residence");
        assert!((0.58..=0.62).contains(&f), "{f}");
        let c = synth_corpus(&small_spec(0.117, 2000)).unwrap();
        let f = c.true_positive_fraction("per:city_of_residence");
        assert!((f - 0.117).abs() <= 0.02, "{f}");
    }

    #[test]
    fn full_fraction_has_no_noise() {
        let mut spec = small_spec(1.0, 300);
        spec.relations[0].noise_patterns.clear();
        let c = synth_corpus(&spec).unwrap();
        assert!(c.train.info.iter().all(|i| i.class != PatternClass::Noise));
    }

    #[test]
    fn infeasible_specs_fail() {
        let mut spec = small_spec(0.5, 100);
        spec.relations[0].noise_patterns.clear();
        assert!(matches!(synth_corpus(&spec), Err(SynthError::Infeasible { .. })));
        let mut spec = small_spec(0.5, 100);
        spec.relations[0].true_patterns.clear();
        assert!(matches!(synth_corpus(&spec), Err(SynthError::Infeasible { .. })));
        let mut spec = small_spec(0.5, 100);
        spec.relations[0].true_patterns[0].heads[0] = 9;
        assert!(matches!(synth_corpus(&spec), Err(SynthError::Template { .. })));
    }

    #[test]
    fn output_round_trips_through_loaders_and_aligns() {
        let c = synth_corpus(&small_spec(0.5, 200)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write(dir.path()).unwrap();
        let read = |n: &str| fs::read_to_string(dir.path().join(n)).unwrap();
        let corpus = parse_corpus(&read("corpus.conll")).unwrap();
        assert_eq!(corpus, c.train.sentences);
        let schema = parse_schema(&read("schema.tsv")).unwrap();
        let kb = KnowledgeBase {
            facts: parse_facts(&read("facts.tsv"), &schema).unwrap(),
            aliases: parse_aliases(&read("aliases.tsv")).unwrap(),
            schema,
        };
        let positives = generate_positives(&corpus, &kb, &AlignmentConfig::default());
        assert_eq!(positives.len(), 200);
        let gold = parse_gold(&read("gold.tsv")).unwrap();
        assert_eq!(gold.len(), c.train.sentences.len());
        let ids: BTreeSet<&str> = gold.iter().map(|g| g.instance_id.as_str()).collect();
        assert!(positives.iter().all(|p| ids.contains(p.id.as_str())));
        let planted = parse_patterns(&read("patterns.tsv"));
        assert_eq!(planted.len(), 4);
        assert_eq!(
            planted[&("per:city_of_residence".to_string(), "PERSON<-nsubj<-lives->prep_in->LOCATION".to_string())],
            PatternClass::True
        );
        assert!(read("embeddings.txt").lines().count() > 5);
    }

    #[test]
    fn true_words_sit_at_the_requested_cosine() {
        let c = synth_corpus(&small_spec(0.5, 50)).unwrap();
        let get = |w: &str| c.embeddings.iter().find(|(x, _)| x == w).unwrap().1.clone();
        let cos = crate::semantic::cosine(&get("lives"), &get("resides")).unwrap();
        // Both at 0.9 to the same direction: cosine ≥ 2·0.81 − 1.
        assert!(cos >= 0.62 - 1e-9, "{cos}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_corpus(&small_spec(0.5, 100)).unwrap();
        let b = synth_corpus(&small_spec(0.5, 100)).unwrap();
        assert_eq!(a.train.sentences, b.train.sentences);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn fixture_spec_parses_and_generates() {
        let spec = SynthSpec::fixture();
        let c = synth_corpus(&spec).unwrap();
        for r in &spec.relations {
            assert!((c.true_positive_fraction(&r.name) - r.true_positive_fraction).abs() <= 0.02);
        }
        let keys: BTreeSet<&str> = c.patterns.iter().map(|p| p.pattern.as_str()).collect();
        assert_eq!(keys.len(), c.patterns.len(), "planted templates must give distinct pattern keys");
    }
}
