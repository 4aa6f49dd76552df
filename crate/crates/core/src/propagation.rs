//! Growing the filtered training set with discarded instances whose
//! patterns lie closest to the accepted-pattern centroid.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{sort_canonical, RelationInstance, StageLabel};
use crate::features::pattern_words;
use crate::semantic::{bow_vector, compose_sdp, cosine, svd_reduce, EmbeddingTable, Normalizer, SemanticError, SparseVector, Vocabulary};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum PropagationError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("propagation unavailable: {0}")]
    Unavailable(String),
    #[error("the embedding representation needs an embedding table")]
    MissingEmbeddings,
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_filtered: usize,
    pub n_ds: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub k: usize,
}

impl Schedule {
    pub fn new(n_filtered: usize, n_ds: usize, k_max: usize, k: usize) -> Result<Self, PropagationError> {
        let s = Schedule {
            n_filtered,
            n_ds,
            k_max,
            k,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.n_filtered == 0 || self.n_filtered > self.n_ds {
            return Err(PropagationError::Schedule(format!(
                "need 1 <= N_filtered <= N_DS, got {} and {}",
                self.n_filtered, self.n_ds
            )));
        }
        if self.k_max == 0 || self.k > self.k_max {
            return Err(PropagationError::Schedule(format!(
                "need K >= 1 and k <= K, got K={} k={}",
                self.k_max, self.k
            )));
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> Schedule {
        Schedule { k, ..*self }
    }
}

/// `round(N_filtered * (N_DS / N_filtered)^(k/K))`, exact at both ends.
pub fn schedule_size(s: &Schedule) -> usize {
    if s.k == 0 {
        return s.n_filtered;
    }
    if s.k == s.k_max {
        return s.n_ds;
    }
    let ratio = s.n_ds as f64 / s.n_filtered as f64;
    let n = s.n_filtered as f64 * ratio.powf(s.k as f64 / s.k_max as f64);
    (n.round() as usize).clamp(s.n_filtered, s.n_ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Embedding,
    Bow,
    Svd,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Representation::Embedding, Representation::Bow, Representation::Svd];

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Embedding => "embedding",
            Representation::Bow => "bow",
            Representation::Svd => "svd",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "embedding" => Ok(Representation::Embedding),
            "bow" => Ok(Representation::Bow),
            "svd" => Ok(Representation::Svd),
            other => Err(format!("unknown representation `{other}` (embedding, bow, svd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepVector {
    Dense(Vec<f64>),
    Sparse(SparseVector),
}

impl RepVector {
    pub fn cosine(&self, other: &RepVector) -> Result<f64, SemanticError> {
        match (self, other) {
            (RepVector::Dense(a), RepVector::Dense(b)) => cosine(a, b),
            (RepVector::Sparse(a), RepVector::Sparse(b)) => a.cosine(b),
            (RepVector::Dense(a), RepVector::Sparse(b)) | (RepVector::Sparse(b), RepVector::Dense(a)) => {
                cosine(a, &b.to_dense())
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            RepVector::Dense(v) => v.iter().all(|x| *x == 0.0),
            RepVector::Sparse(v) => v.is_zero(),
        }
    }
}

/// Arithmetic mean of the vectors. Errors when there are none or the mean
/// is the zero vector.
pub fn centroid(vectors: &[&RepVector]) -> Result<RepVector, PropagationError> {
    let Some(first) = vectors.first() else {
        return Err(PropagationError::Unavailable("no accepted pattern has a representation".into()));
    };
    let n = vectors.len() as f64;
    let mean = match first {
        RepVector::Dense(v0) => {
            let mut acc = vec![0.0; v0.len()];
            for v in vectors {
                let RepVector::Dense(v) = v else {
                    unreachable!("mixed representations")
                };
                if v.len() != acc.len() {
                    return Err(SemanticError::DimensionMismatch {
                        left: acc.len(),
                        right: v.len(),
                    }
                    .into());
                }
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            RepVector::Dense(acc)
        }
        RepVector::Sparse(s0) => {
            let mut acc = SparseVector {
                dim: s0.dim,
                entries: BTreeMap::new(),
            };
            for v in vectors {
                let RepVector::Sparse(v) = v else {
                    unreachable!("mixed representations")
                };
                for (&i, &x) in &v.entries {
                    *acc.entries.entry(i).or_insert(0.0) += x;
                }
            }
            acc.entries.values_mut().for_each(|a| *a /= n);
            RepVector::Sparse(acc)
        }
    };
    if mean.is_zero() {
        return Err(PropagationError::Unavailable("accepted patterns cancel to a zero centroid".into()));
    }
    Ok(mean)
}

/// Mean of the non-empty pattern vectors.
pub fn centroid_of(vectors: &[crate::semantic::PatternVector]) -> Result<Vec<f64>, PropagationError> {
    let reps: Vec<RepVector> = vectors
        .iter()
        .filter(|v| !v.empty)
        .map(|v| RepVector::Dense(v.values.clone()))
        .collect();
    match centroid(&reps.iter().collect::<Vec<_>>())? {
        RepVector::Dense(v) => Ok(v),
        RepVector::Sparse(_) => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPattern {
    pub pattern: String,
    pub similarity: f64,
    pub instances: usize,
}

fn rank_order(a: &RankedPattern, b: &RankedPattern) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(b.instances.cmp(&a.instances))
        .then_with(|| a.pattern.cmp(&b.pattern))
}

/// Candidates `(pattern, vector, instance count)` sorted by similarity to
/// the centroid, then instance count descending, then pattern.
pub fn rank_candidates<'a>(
    centroid: &RepVector,
    candidates: impl IntoIterator<Item = (&'a str, &'a RepVector, usize)>,
) -> Result<Vec<RankedPattern>, SemanticError> {
    let mut out = candidates
        .into_iter()
        .map(|(p, v, n)| {
            Ok(RankedPattern {
                pattern: p.to_string(),
                similarity: centroid.cosine(v)?,
                instances: n,
            })
        })
        .collect::<Result<Vec<_>, SemanticError>>()?;
    out.sort_by(rank_order);
    Ok(out)
}

/// Vectors for every pattern of one relation under one representation.
/// `None` marks a pattern with no usable words.
#[derive(Debug, Clone)]
pub struct PatternSpace {
    pub representation: Representation,
    pub vectors: BTreeMap<String, Option<RepVector>>,
}

impl PatternSpace {
    pub fn build<'a>(
        patterns: impl IntoIterator<Item = &'a str>,
        representation: Representation,
        normalizer: &Normalizer,
        table: Option<&EmbeddingTable>,
        svd_rank: usize,
    ) -> Result<Self, PropagationError> {
        let keys: BTreeSet<&str> = patterns.into_iter().collect();
        let words: Vec<(&str, Vec<String>)> = keys.iter().map(|k| (*k, pattern_words(k))).collect();
        let vectors = match representation {
            Representation::Embedding => {
                let table = table.ok_or(PropagationError::MissingEmbeddings)?;
                words
                    .par_iter()
                    .map(|(k, w)| {
                        let v = compose_sdp(w, table);
                        (k.to_string(), (!v.empty).then_some(RepVector::Dense(v.values)))
                    })
                    .collect()
            }
            Representation::Bow | Representation::Svd => {
                let content: Vec<Vec<String>> = words.iter().map(|(_, w)| normalizer.content_words(w)).collect();
                let vocab = Vocabulary::build(content.iter().map(Vec::as_slice));
                let bows: Vec<SparseVector> = content.iter().map(|c| bow_vector(c, &vocab)).collect();
                if representation == Representation::Bow {
                    words
                        .iter()
                        .zip(bows)
                        .map(|((k, _), b)| (k.to_string(), (!b.is_zero()).then_some(RepVector::Sparse(b))))
                        .collect()
                } else {
                    Self::svd_vectors(&words, &bows, vocab.len(), svd_rank)?
                }
            }
        };
        Ok(PatternSpace {
            representation,
            vectors,
        })
    }

    fn svd_vectors(
        words: &[(&str, Vec<String>)],
        bows: &[SparseVector],
        vocab_len: usize,
        svd_rank: usize,
    ) -> Result<BTreeMap<String, Option<RepVector>>, PropagationError> {
        let rank = svd_rank.min(bows.len()).min(vocab_len);
        if rank == 0 {
            return Ok(words.iter().map(|(k, _)| (k.to_string(), None)).collect());
        }
        let mut m = DMatrix::zeros(bows.len(), vocab_len);
        for (i, b) in bows.iter().enumerate() {
            for (&j, &x) in &b.entries {
                m[(i, j)] = x;
            }
        }
        let (reduced, _) = svd_reduce(&m, rank)?;
        Ok(words
            .iter()
            .zip(bows)
            .enumerate()
            .map(|(i, ((k, _), b))| {
                let v = (!b.is_zero()).then(|| RepVector::Dense(reduced.row(i).iter().copied().collect()));
                (k.to_string(), v)
            })
            .collect())
    }

    pub fn get(&self, pattern: &str) -> Option<&RepVector> {
        self.vectors.get(pattern).and_then(Option::as_ref)
    }

    /// Ranks the `candidates` (pattern, instance count) against the centroid
    /// of `accepted`. Patterns without a vector are left out.
    pub fn rank(
        &self,
        accepted: &BTreeSet<String>,
        candidates: &BTreeMap<String, usize>,
        min_sim: Option<f64>,
    ) -> Result<Vec<RankedPattern>, PropagationError> {
        let acc: Vec<&RepVector> = accepted.iter().filter_map(|p| self.get(p)).collect();
        let c = centroid(&acc)?;
        let mut ranking = rank_candidates(
            &c,
            candidates
                .iter()
                .filter(|(p, _)| !accepted.contains(*p))
                .filter_map(|(p, n)| self.get(p).map(|v| (p.as_str(), v, *n))),
        )?;
        if let Some(min) = min_sim {
            ranking.retain(|r| r.similarity >= min);
        }
        Ok(ranking)
    }
}

/// KEPT instances followed by DISCARDED instances taken pattern by pattern
/// along `ranking`, each pattern in canonical order, until the schedule size
/// is reached. At `k = K` every discarded instance is included, unranked
/// ones last.
pub fn assemble_training_set(
    kept: &[RelationInstance],
    discarded: &[RelationInstance],
    ranking: &[RankedPattern],
    schedule: &Schedule,
) -> Vec<RelationInstance> {
    let target = schedule_size(schedule);
    let mut out: Vec<RelationInstance> = kept.to_vec();
    sort_canonical(&mut out);
    for i in &mut out {
        i.stage_label = StageLabel::Kept;
    }

    let mut by_pattern: BTreeMap<&str, Vec<&RelationInstance>> = BTreeMap::new();
    for inst in discarded {
        by_pattern.entry(inst.pattern.as_str()).or_default().push(inst);
    }
    for group in by_pattern.values_mut() {
        group.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
    }

    let push = |out: &mut Vec<RelationInstance>, inst: &RelationInstance| {
        let mut inst = inst.clone();
        inst.stage_label = StageLabel::Propagated;
        out.push(inst);
    };

    'walk: for r in ranking {
        if let Some(group) = by_pattern.remove(r.pattern.as_str()) {
            for inst in group {
                if out.len() >= target {
                    break 'walk;
                }
                push(&mut out, inst);
            }
        }
    }
    if schedule.k == schedule.k_max {
        let mut rest: Vec<&RelationInstance> = by_pattern.into_values().flatten().collect();
        rest.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        for inst in rest {
            push(&mut out, inst);
        }
    }
    out
}
