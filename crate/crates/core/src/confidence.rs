//! SDP pattern statistics, smoothed confidence and the annotation queue.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::{sort_canonical, DsLabel, RelationInstance};
use crate::corpus::{ParsedSentence, SentenceKey};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    #[default]
    Unlabeled,
    Accepted,
    Rejected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Unlabeled => "UNLABELED",
            Verdict::Accepted => "ACCEPTED",
            Verdict::Rejected => "REJECTED",
        })
    }
}

/// A sentence illustrating a pattern, with both mention spans so a viewer
/// can highlight them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSentence {
    pub doc_id: String,
    pub sentence_id: u64,
    pub subject: (usize, usize),
    pub object: (usize, usize),
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpPattern {
    pub relation: String,
    pub sdp: String,
    pub pos_count: usize,
    pub neg_count: usize,
    pub confidence: f64,
    #[serde(default)]
    pub verdict: Verdict,
    #[serde(default)]
    pub sample_sentences: Vec<SampleSentence>,
}

/// `(pos + alpha) / (neg + alpha)`: smoothed odds that an occurrence is a
/// positive DS instance.
pub fn confidence(pos_count: usize, neg_count: usize, alpha: f64) -> f64 {
    assert!(alpha > 0.0, "smoothing constant must be positive");
    (pos_count as f64 + alpha) / (neg_count as f64 + alpha)
}

/// Groups the instances of `relation` by pattern key. Patterns come back in
/// key order; `confidence` is filled with `alpha`.
pub fn aggregate_patterns(
    instances: &[RelationInstance],
    relation: &str,
    alpha: f64,
    samples: usize,
) -> Vec<SdpPattern> {
    let mut ordered: Vec<&RelationInstance> =
        instances.iter().filter(|i| i.relation == relation).collect();
    ordered.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));

    let mut by_key: BTreeMap<&str, SdpPattern> = BTreeMap::new();
    for inst in ordered {
        let key = if inst.pattern.is_empty() {
            inst.sdp.as_str()
        } else {
            inst.pattern.as_str()
        };
        let p = by_key.entry(key).or_insert_with(|| SdpPattern {
            relation: relation.to_string(),
            sdp: key.to_string(),
            pos_count: 0,
            neg_count: 0,
            confidence: 0.0,
            verdict: Verdict::Unlabeled,
            sample_sentences: Vec::new(),
        });
        match inst.ds_label {
            DsLabel::Positive => {
                p.pos_count += 1;
                if p.sample_sentences.len() < samples {
                    p.sample_sentences.push(SampleSentence {
                        doc_id: inst.subject.doc_id.clone(),
                        sentence_id: inst.subject.sentence_id,
                        subject: inst.subject.span(),
                        object: inst.object.span(),
                        text: String::new(),
                    });
                }
            }
            DsLabel::Negative => p.neg_count += 1,
        }
    }
    by_key
        .into_values()
        .map(|mut p| {
            p.confidence = confidence(p.pos_count, p.neg_count, alpha);
            p
        })
        .collect()
}

fn queue_order(a: &SdpPattern, b: &SdpPattern) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.pos_count.cmp(&a.pos_count))
        .then_with(|| a.sdp.cmp(&b.sdp))
}

/// Most confident first; ties by positive count, then pattern text.
pub fn ranked_queue(mut patterns: Vec<SdpPattern>, top_k: usize) -> Vec<SdpPattern> {
    patterns.sort_by(queue_order);
    patterns.truncate(top_k);
    patterns
}

/// Fills each sample's `text`, marking the subject `[[...]]` and the
/// object `{{...}}`.
pub fn render_samples(patterns: &mut [SdpPattern], corpus: &BTreeMap<SentenceKey, &ParsedSentence>) {
    for p in patterns {
        for s in &mut p.sample_sentences {
            let key = SentenceKey {
                doc_id: s.doc_id.clone(),
                sentence_id: s.sentence_id,
            };
            if let Some(sentence) = corpus.get(&key) {
                s.text = highlight(sentence, s.subject, s.object);
            }
        }
    }
}

pub fn highlight(sentence: &ParsedSentence, subject: (usize, usize), object: (usize, usize)) -> String {
    let mut words = Vec::with_capacity(sentence.len() + 4);
    for t in &sentence.tokens {
        let mut w = String::new();
        if t.index == subject.0 {
            w.push_str("[[");
        }
        if t.index == object.0 {
            w.push_str("{{");
        }
        w.push_str(&t.surface);
        if t.index == object.1 {
            w.push_str("}}");
        }
        if t.index == subject.1 {
            w.push_str("]]");
        }
        words.push(w);
    }
    words.join(" ")
}

fn tsv_clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Writes the spreadsheet form of a queue: `rank, confidence, pos_count,
/// neg_count, sdp, sample_1..sample_S, verdict`. The verdict column holds
/// `x` for accepted patterns and is blank otherwise.
pub fn write_queue_tsv<W: Write>(out: &mut W, queue: &[SdpPattern], samples: usize) -> std::io::Result<()> {
    let mut header = vec![
        "rank".to_string(),
        "confidence".into(),
        "pos_count".into(),
        "neg_count".into(),
        "sdp".into(),
    ];
    header.extend((1..=samples).map(|i| format!("sample_{i}")));
    header.push("verdict".into());
    writeln!(out, "{}", header.join("\t"))?;
    for (rank, p) in queue.iter().enumerate() {
        let mut cols = vec![
            (rank + 1).to_string(),
            format!("{}", p.confidence),
            p.pos_count.to_string(),
            p.neg_count.to_string(),
            tsv_clean(&p.sdp),
        ];
        for i in 0..samples {
            cols.push(
                p.sample_sentences
                    .get(i)
                    .map(|s| tsv_clean(&s.text))
                    .unwrap_or_default(),
            );
        }
        cols.push(if p.verdict == Verdict::Accepted { "x" } else { "" }.to_string());
        writeln!(out, "{}", cols.join("\t"))?;
    }
    Ok(())
}

/// Sorts instances canonically and returns them grouped by relation.
pub fn by_relation(instances: &[RelationInstance]) -> BTreeMap<String, Vec<RelationInstance>> {
    let mut out: BTreeMap<String, Vec<RelationInstance>> = BTreeMap::new();
    for i in instances {
        out.entry(i.relation.clone()).or_default().push(i.clone());
    }
    for v in out.values_mut() {
        sort_canonical(v);
    }
    out
}
