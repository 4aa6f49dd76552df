//! Distant-supervision alignment: KB facts against co-occurring mentions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{detect_mentions, EntityMention, KnowledgeBase, ParsedSentence, RelationSchema, SentenceKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DsLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageLabel {
    Kept,
    Discarded,
    Propagated,
    Untouched,
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageLabel::Kept => "KEPT",
            StageLabel::Discarded => "DISCARDED",
            StageLabel::Propagated => "PROPAGATED",
            StageLabel::Untouched => "UNTOUCHED",
        })
    }
}

/// One candidate (subject mention, object mention, sentence) for a relation.
///
/// `sdp`, `pattern`, `no_verb` and `features` are empty until feature
/// extraction runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub relation: String,
    pub subject: EntityMention,
    pub object: EntityMention,
    pub ds_label: DsLabel,
    pub stage_label: StageLabel,
    #[serde(default)]
    pub sdp: String,
    /// Annotation key: the SDP itself, or for verb-less paths the SDP plus
    /// the words between the two mentions.
    #[serde(default)]
    pub pattern: String,
    #[serde(default)]
    pub no_verb: bool,
    #[serde(default)]
    pub features: Vec<String>,
}

impl RelationInstance {
    pub fn new(
        relation: &str,
        subject: EntityMention,
        object: EntityMention,
        ds_label: DsLabel,
    ) -> Self {
        RelationInstance {
            id: instance_id(relation, &subject, &object),
            relation: relation.to_string(),
            subject,
            object,
            ds_label,
            stage_label: StageLabel::Untouched,
            sdp: String::new(),
            pattern: String::new(),
            no_verb: false,
            features: Vec::new(),
        }
    }

    pub fn sentence_key(&self) -> SentenceKey {
        SentenceKey {
            doc_id: self.subject.doc_id.clone(),
            sentence_id: self.subject.sentence_id,
        }
    }

    /// `(doc_id, sentence_id, subject first token, object first token)`,
    /// extended with the span ends and relation for a total order.
    pub fn canonical_key(&self) -> (&str, u64, usize, usize, usize, usize, &str) {
        (
            &self.subject.doc_id,
            self.subject.sentence_id,
            self.subject.first,
            self.object.first,
            self.subject.last,
            self.object.last,
            &self.relation,
        )
    }

    pub fn span_key(&self) -> (String, SentenceKey, (usize, usize), (usize, usize)) {
        (
            self.relation.clone(),
            self.sentence_key(),
            self.subject.span(),
            self.object.span(),
        )
    }
}

/// Stable identifier derived from the relation, sentence and spans.
pub fn instance_id(relation: &str, subject: &EntityMention, object: &EntityMention) -> String {
    format!(
        "{}:{}:{}-{}:{}-{}:{}",
        subject.doc_id,
        subject.sentence_id,
        subject.first,
        subject.last,
        object.first,
        object.last,
        relation
    )
}

pub fn sort_canonical(instances: &mut [RelationInstance]) {
    instances.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlignmentConfig {
    pub per_subject_cap: usize,
    pub negative_ratio: f64,
    pub rng_seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            per_subject_cap: 100,
            negative_ratio: 1.0,
            rng_seed: 13,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.per_subject_cap < 1 {
            return Err("per_subject_cap must be >= 1".into());
        }
        if !(self.negative_ratio > 0.0 && self.negative_ratio.is_finite()) {
            return Err("negative_ratio must be a positive number".into());
        }
        Ok(())
    }
}

/// Ordered, non-overlapping, type-compatible mention pairs of one sentence
/// for one relation; both orderings of a pair are separate candidates.
pub fn candidate_pairs<'a>(
    mentions: &'a [EntityMention],
    spec: &crate::corpus::RelationSpec,
) -> Vec<(&'a EntityMention, &'a EntityMention)> {
    let mut out = Vec::new();
    for s in mentions {
        for o in mentions {
            if s.overlaps(o) || !spec.accepts(s.entity_type, o.entity_type) {
                continue;
            }
            out.push((s, o));
        }
    }
    out
}

fn mentions_by_sentence(
    corpus: &[ParsedSentence],
    kb: &KnowledgeBase,
) -> Vec<Vec<EntityMention>> {
    corpus
        .par_iter()
        .map(|s| detect_mentions(s, &kb.aliases))
        .collect()
}

/// One candidate per (relation, sentence, subject span, object span); the
/// kb_ids of every mention sharing those spans are collected alongside.
type SpanGroups = BTreeMap<(String, (usize, usize), (usize, usize)), Vec<(EntityMention, EntityMention)>>;

fn span_candidates(mentions: &[EntityMention], schema: &RelationSchema) -> SpanGroups {
    let mut grouped: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for spec in schema.relations() {
        for (s, o) in candidate_pairs(mentions, spec) {
            grouped
                .entry((spec.name.clone(), s.span(), o.span()))
                .or_default()
                .push((s.clone(), o.clone()));
        }
    }
    grouped
}

fn is_fact(facts: &BTreeSet<(&str, &str, &str)>, rel: &str, s: &EntityMention, o: &EntityMention) -> bool {
    match (&s.kb_id, &o.kb_id) {
        (Some(a), Some(b)) => facts.contains(&(rel, a.as_str(), b.as_str())),
        _ => false,
    }
}

/// Positive DS instances: both mentions of a fact linked in one sentence.
/// At most `per_subject_cap` are kept per (relation, subject kb_id), the
/// earliest in canonical order.
pub fn generate_positives(
    corpus: &[ParsedSentence],
    kb: &KnowledgeBase,
    config: &AlignmentConfig,
) -> Vec<RelationInstance> {
    let facts = kb.fact_set();
    let mentions = mentions_by_sentence(corpus, kb);
    let mut positives: Vec<RelationInstance> = mentions
        .par_iter()
        .flat_map_iter(|ms| {
            let mut local = Vec::new();
            for ((rel, _, _), pairs) in span_candidates(ms, &kb.schema) {
                if let Some((s, o)) = pairs.iter().find(|(s, o)| is_fact(&facts, &rel, s, o)) {
                    local.push(RelationInstance::new(&rel, s.clone(), o.clone(), DsLabel::Positive));
                }
            }
            local
        })
        .collect();
    sort_canonical(&mut positives);
    dedup_spans(&mut positives);

    let mut per_subject: HashMap<(String, String), usize> = HashMap::new();
    positives.retain(|inst| {
        let key = (
            inst.relation.clone(),
            inst.subject.kb_id.clone().unwrap_or_default(),
        );
        let count = per_subject.entry(key).or_insert(0);
        *count += 1;
        *count <= config.per_subject_cap
    });
    positives
}

fn dedup_spans(instances: &mut Vec<RelationInstance>) {
    let mut seen = BTreeSet::new();
    instances.retain(|i| seen.insert(i.span_key()));
}

fn relation_seed(seed: u64, relation: &str) -> u64 {
    // FNV-1a over the relation name, mixed into the configured seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in relation.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

/// Seeded uniform negatives per relation from co-occurring type-compatible
/// pairs that are not facts of that relation. `positives` is the output of
/// [`generate_positives`] and fixes both the sample size and the spans that
/// are off limits.
pub fn sample_negatives(
    corpus: &[ParsedSentence],
    kb: &KnowledgeBase,
    positives: &[RelationInstance],
    config: &AlignmentConfig,
) -> Vec<RelationInstance> {
    let facts = kb.fact_set();
    let positive_spans: BTreeSet<_> = positives.iter().map(|p| p.span_key()).collect();
    let mentions = mentions_by_sentence(corpus, kb);

    let mut candidates: BTreeMap<String, Vec<RelationInstance>> = BTreeMap::new();
    for ms in &mentions {
        for ((rel, _, _), pairs) in span_candidates(ms, &kb.schema) {
            if pairs.iter().any(|(s, o)| is_fact(&facts, &rel, s, o)) {
                continue;
            }
            let (s, o) = pairs[0].clone();
            let inst = RelationInstance::new(&rel, s, o, DsLabel::Negative);
            if positive_spans.contains(&inst.span_key()) {
                continue;
            }
            candidates.entry(rel).or_default().push(inst);
        }
    }

    let mut positive_counts: HashMap<&str, usize> = HashMap::new();
    for p in positives {
        *positive_counts.entry(p.relation.as_str()).or_insert(0) += 1;
    }

    let mut negatives = Vec::new();
    for (rel, mut pool) in candidates {
        sort_canonical(&mut pool);
        dedup_spans(&mut pool);
        let positives = positive_counts.get(rel.as_str()).copied().unwrap_or(0);
        let wanted = (config.negative_ratio * positives as f64).round() as usize;
        if wanted >= pool.len() {
            negatives.extend(pool);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(relation_seed(config.rng_seed, &rel));
        let mut picked = index::sample(&mut rng, pool.len(), wanted).into_vec();
        picked.sort_unstable();
        let mut pool: Vec<Option<RelationInstance>> = pool.into_iter().map(Some).collect();
        negatives.extend(picked.into_iter().filter_map(|i| pool[i].take()));
    }
    sort_canonical(&mut negatives);
    negatives
}

/// Every candidate pair of every relation, unlabeled by the KB. Used to
/// build held-out sets whose labels come from elsewhere.
pub fn all_candidates(corpus: &[ParsedSentence], kb: &KnowledgeBase) -> Vec<RelationInstance> {
    let mentions = mentions_by_sentence(corpus, kb);
    let mut out = Vec::new();
    for ms in &mentions {
        for ((rel, _, _), pairs) in span_candidates(ms, &kb.schema) {
            let (s, o) = pairs[0].clone();
            out.push(RelationInstance::new(&rel, s, o, DsLabel::Negative));
        }
    }
    sort_canonical(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AliasTable, EntityTag, KbFact, RelationSpec, Token};

    fn tok(i: usize, w: &str, tag: EntityTag, head: usize) -> Token {
        Token {
            index: i,
            surface: w.into(),
            lemma: w.to_lowercase(),
            pos: "NNP".into(),
            entity: tag,
            head,
            deprel: if head == 0 { String::new() } else { "dep".into() },
        }
    }

    /// Sentence of entity words separated by a verb; all attach to token 1.
    fn sentence(doc: &str, id: u64, words: &[(&str, EntityTag)]) -> ParsedSentence {
        ParsedSentence {
            doc_id: doc.into(),
            sentence_id: id,
            tokens: words
                .iter()
                .enumerate()
                .map(|(i, (w, t))| tok(i + 1, w, *t, if i == 0 { 0 } else { 1 }))
                .collect(),
        }
    }

    fn kb(facts: &[(&str, &str, &str)], aliases: &[(&str, &str)]) -> KnowledgeBase {
        let mut table = AliasTable::new();
        for (id, a) in aliases {
            table.insert(id, a);
        }
        KnowledgeBase {
            facts: facts
                .iter()
                .map(|(r, s, o)| KbFact {
                    relation: r.to_string(),
                    subject_id: s.to_string(),
                    object_id: o.to_string(),
                })
                .collect(),
            aliases: table,
            schema: RelationSchema::new([
                RelationSpec {
                    name: "per:spouse".into(),
                    subject_type: "PERSON".into(),
                    object_type: "PERSON".into(),
                },
                RelationSpec {
                    name: "per:born_in".into(),
                    subject_type: "PERSON".into(),
                    object_type: "LOCATION".into(),
                },
            ]),
        }
    }

    use EntityTag::{LocationCountry as Loc, None as O, Person as Per};

    #[test]
    fn spouse_positive_requires_cooccurrence() {
        let kb = kb(
            &[("per:spouse", "OBAMA", "MICHELLE")],
            &[("OBAMA", "Barack"), ("MICHELLE", "Michelle")],
        );
        let corpus = vec![
            sentence("d", 0, &[("meeting", O), ("Barack", Per), ("wife", O), ("Michelle", Per)]),
            sentence("d", 1, &[("saw", O), ("Michelle", Per)]),
        ];
        let pos = generate_positives(&corpus, &kb, &AlignmentConfig::default());
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].subject.kb_id.as_deref(), Some("OBAMA"));
        assert_eq!(pos[0].object.kb_id.as_deref(), Some("MICHELLE"));
        assert_eq!(pos[0].sentence_key().sentence_id, 0);
        assert_eq!(pos[0].ds_label, DsLabel::Positive);
    }

    #[test]
    fn cap_keeps_first_in_canonical_order() {
        let kb = kb(&[("per:spouse", "A", "B")], &[("A", "Ann"), ("B", "Bob")]);
        let corpus: Vec<_> = (0..150)
            .rev()
            .map(|i| sentence("doc", i, &[("x", O), ("Ann", Per), ("Bob", Per)]))
            .collect();
        let config = AlignmentConfig {
            per_subject_cap: 100,
            ..Default::default()
        };
        let pos = generate_positives(&corpus, &kb, &config);
        assert_eq!(pos.len(), 100);
        let ids: Vec<u64> = pos.iter().map(|p| p.subject.sentence_id).collect();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn facts_are_never_negatives() {
        let kb = kb(
            &[("per:born_in", "OBAMA", "US")],
            &[("OBAMA", "Obama"), ("US", "U.S."), ("X", "Xavier")],
        );
        let corpus = vec![
            sentence("d", 0, &[("in", O), ("Obama", Per), ("U.S.", Loc)]),
            sentence("d", 1, &[("in", O), ("Xavier", Per), ("U.S.", Loc)]),
        ];
        let config = AlignmentConfig {
            negative_ratio: 10.0,
            ..Default::default()
        };
        let pos = generate_positives(&corpus, &kb, &config);
        let neg = sample_negatives(&corpus, &kb, &pos, &config);
        assert_eq!(pos.len(), 1);
        assert!(neg
            .iter()
            .filter(|n| n.relation == "per:born_in")
            .all(|n| n.subject.kb_id.as_deref() != Some("OBAMA")));
        assert!(neg.iter().any(|n| n.subject.kb_id.as_deref() == Some("X")));
    }

    #[test]
    fn no_candidates_no_negatives() {
        let kb = kb(&[("per:spouse", "A", "B")], &[("A", "Ann"), ("B", "Bob")]);
        let corpus = vec![sentence("d", 0, &[("x", O), ("Ann", Per), ("Bob", Per)])];
        let config = AlignmentConfig::default();
        let pos = generate_positives(&corpus, &kb, &config);
        let neg = sample_negatives(&corpus, &kb, &pos, &config);
        // (Bob, Ann) is the only non-fact spouse pair
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].subject.kb_id.as_deref(), Some("B"));
        let empty = sample_negatives(&corpus[..0], &kb, &pos, &config);
        assert!(empty.is_empty());
    }

    #[test]
    fn negative_sampling_is_seeded_and_sized() {
        // 40 spouse facts, 500 non-fact candidates.
        let mut aliases = Vec::new();
        let mut facts = Vec::new();
        let mut names = Vec::new();
        for i in 0..40 {
            names.push((format!("S{i}"), format!("Subj{i}")));
            names.push((format!("O{i}"), format!("Obj{i}")));
            facts.push(("per:spouse".to_string(), format!("S{i}"), format!("O{i}")));
        }
        for (id, a) in &names {
            aliases.push((id.as_str(), a.as_str()));
        }
        let fact_refs: Vec<(&str, &str, &str)> =
            facts.iter().map(|(r, s, o)| (r.as_str(), s.as_str(), o.as_str())).collect();
        let mut kb = kb(&fact_refs, &aliases);
        kb.schema = RelationSchema::new([RelationSpec {
            name: "per:spouse".into(),
            subject_type: "PERSON".into(),
            object_type: "PERSON".into(),
        }]);
        let mut corpus = Vec::new();
        for i in 0..40 {
            let (s, o) = (format!("Subj{i}"), format!("Obj{i}"));
            corpus.push(sentence("a", i, &[("x", O), (&s, Per), (&o, Per)]));
        }
        // each of these yields 2 non-fact candidates
        for i in 0..250u64 {
            let s = format!("Subj{}", i % 40);
            let o = format!("Obj{}", (i + 1 + i / 40) % 40);
            corpus.push(sentence("b", i, &[("x", O), (&s, Per), (&o, Per)]));
        }
        let config = AlignmentConfig {
            negative_ratio: 1.0,
            rng_seed: 99,
            per_subject_cap: 1000,
        };
        let pos = generate_positives(&corpus, &kb, &config);
        assert_eq!(pos.len(), 40);
        let n1 = sample_negatives(&corpus, &kb, &pos, &config);
        let n2 = sample_negatives(&corpus, &kb, &pos, &config);
        assert_eq!(n1.len(), 40);
        assert_eq!(n1, n2);
        let other = sample_negatives(
            &corpus,
            &kb,
            &pos,
            &AlignmentConfig {
                rng_seed: 100,
                ..config.clone()
            },
        );
        assert_ne!(n1, other);
        let pos_spans: BTreeSet<_> = pos.iter().map(|p| p.span_key()).collect();
        assert!(n1.iter().all(|n| !pos_spans.contains(&n.span_key())));
    }
}
