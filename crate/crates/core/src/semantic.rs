//! Pattern representations: averaged word embeddings, bag-of-words and
//! SVD-reduced bag-of-words, compared by cosine.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::features::parse_word_list;

pub const DEFAULT_STOPWORDS: &str = include_str!("../resources/stopwords.txt");
pub const DEFAULT_SVD_RANK: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum SemanticError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("rank {rank} exceeds min(rows, cols) = {max}")]
    RankTooLarge { rank: usize, max: usize },
}

/// Stopword removal and optional case folding shared by every
/// representation.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub stopwords: HashSet<String>,
    pub case_fold: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            stopwords: parse_word_list(DEFAULT_STOPWORDS),
            case_fold: true,
        }
    }
}

impl Normalizer {
    pub fn from_file(path: &Path, case_fold: bool) -> Result<Self, SemanticError> {
        let text = fs::read_to_string(path).map_err(|source| SemanticError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Normalizer {
            stopwords: parse_word_list(&text),
            case_fold,
        })
    }

    pub fn fold(&self, word: &str) -> String {
        if self.case_fold {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(&word.to_lowercase())
    }

    /// Folded words with stopwords removed, order kept.
    pub fn content_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        words
            .iter()
            .map(AsRef::as_ref)
            .filter(|w| !self.is_stopword(w))
            .map(|w| self.fold(w))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub normalizer: Normalizer,
}

impl EmbeddingTable {
    /// Parses the text format: `token v1 .. vd` per line. A leading
    /// `count dim` header line is skipped.
    pub fn parse(text: &str, normalizer: Normalizer) -> Result<Self, SemanticError> {
        let mut dim = 0usize;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values: Vec<&str> = fields.collect();
            if i == 0 && values.len() == 1 && token.parse::<u64>().is_ok() && values[0].parse::<u64>().is_ok() {
                continue;
            }
            let parsed = values
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| SemanticError::Format {
                    line: line_no,
                    message: format!("bad number: {e}"),
                })?;
            if dim == 0 {
                if parsed.is_empty() {
                    return Err(SemanticError::Format {
                        line: line_no,
                        message: "token has no vector".into(),
                    });
                }
                dim = parsed.len();
            } else if parsed.len() != dim {
                return Err(SemanticError::Format {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", parsed.len()),
                });
            }
            vectors.entry(normalizer.fold(token)).or_insert(parsed);
        }
        if dim == 0 {
            return Err(SemanticError::Format {
                line: 0,
                message: "no vectors found".into(),
            });
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            normalizer,
        })
    }

    pub fn from_vectors(
        vectors: impl IntoIterator<Item = (String, Vec<f64>)>,
        normalizer: Normalizer,
    ) -> Result<Self, SemanticError> {
        let mut dim = 0;
        let mut map = HashMap::new();
        for (i, (token, v)) in vectors.into_iter().enumerate() {
            if dim == 0 {
                dim = v.len();
            } else if v.len() != dim {
                return Err(SemanticError::Format {
                    line: i + 1,
                    message: format!("expected {dim} values, found {}", v.len()),
                });
            }
            map.entry(normalizer.fold(&token)).or_insert(v);
        }
        Ok(EmbeddingTable {
            dim,
            vectors: map,
            normalizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&self.normalizer.fold(word)).map(Vec::as_slice)
    }
}

pub fn load_embeddings(path: &Path, stopwords_path: Option<&Path>) -> Result<EmbeddingTable, SemanticError> {
    let normalizer = match stopwords_path {
        Some(p) => Normalizer::from_file(p, true)?,
        None => Normalizer::default(),
    };
    let text = fs::read_to_string(path).map_err(|source| SemanticError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingTable::parse(&text, normalizer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVector {
    pub values: Vec<f64>,
    pub contributing_words: Vec<String>,
    pub empty: bool,
}

impl PatternVector {
    pub fn zeros(dim: usize) -> Self {
        PatternVector {
            values: vec![0.0; dim],
            contributing_words: Vec::new(),
            empty: true,
        }
    }
}

/// Mean embedding of the non-stopword, in-vocabulary words.
pub fn compose_sdp<S: AsRef<str>>(words: &[S], table: &EmbeddingTable) -> PatternVector {
    let mut out = PatternVector::zeros(table.dim());
    for word in words.iter().map(AsRef::as_ref) {
        if table.normalizer.is_stopword(word) {
            continue;
        }
        if let Some(v) = table.get(word) {
            for (acc, x) in out.values.iter_mut().zip(v) {
                *acc += x;
            }
            out.contributing_words.push(table.normalizer.fold(word));
        }
    }
    let n = out.contributing_words.len();
    if n > 0 {
        out.empty = false;
        for x in &mut out.values {
            *x /= n as f64;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SemanticError> {
    if a.len() != b.len() {
        return Err(SemanticError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Word → column index, built from the words of every pattern.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let words: BTreeSet<&str> = patterns
            .into_iter()
            .flat_map(|p| p.iter().map(AsRef::as_ref))
            .collect();
        Vocabulary {
            index: words.into_iter().enumerate().map(|(i, w)| (w.to_string(), i)).collect(),
        }
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let set: BTreeSet<&str> = words.iter().map(AsRef::as_ref).collect();
        Vocabulary {
            index: set.into_iter().enumerate().map(|(i, w)| (w.to_string(), i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: BTreeMap<usize, f64>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| *v == 0.0)
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(i, v)| large.entries.get(i).map(|w| v * w))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &SparseVector) -> Result<f64, SemanticError> {
        if self.dim != other.dim {
            return Err(SemanticError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok((self.dot(other) / (na * nb)).clamp(-1.0, 1.0))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (&i, &x) in &self.entries {
            v[i] = x;
        }
        v
    }
}

/// Average of one-hot vectors over the in-vocabulary words.
pub fn bow_vector<S: AsRef<str>>(words: &[S], vocabulary: &Vocabulary) -> SparseVector {
    let mut entries = BTreeMap::new();
    let mut n = 0usize;
    for w in words {
        if let Some(i) = vocabulary.get(w.as_ref()) {
            *entries.entry(i).or_insert(0.0) += 1.0;
            n += 1;
        }
    }
    for v in entries.values_mut() {
        *v /= n as f64;
    }
    SparseVector {
        dim: vocabulary.len(),
        entries,
    }
}

/// Right singular vectors of a fitted truncated SVD.
#[derive(Debug, Clone)]
pub struct SvdProjection {
    /// cols × r, columns are the leading right singular vectors.
    pub components: DMatrix<f64>,
    /// Descending.
    pub singular_values: Vec<f64>,
}

impl SvdProjection {
    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>, SemanticError> {
        if row.len() != self.components.nrows() {
            return Err(SemanticError::DimensionMismatch {
                left: row.len(),
                right: self.components.nrows(),
            });
        }
        Ok((0..self.rank())
            .map(|j| dot(row, self.components.column(j).as_slice()))
            .collect())
    }

    /// Maps reduced rows back to the original space.
    pub fn reconstruct(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        reduced * self.components.transpose()
    }
}

/// Rank-`rank` truncated SVD of `matrix` (patterns × vocabulary). Returns the
/// reduced rows `U_r Σ_r` and the projection.
pub fn svd_reduce(matrix: &DMatrix<f64>, rank: usize) -> Result<(DMatrix<f64>, SvdProjection), SemanticError> {
    let max = matrix.nrows().min(matrix.ncols());
    if rank > max || rank == 0 {
        return Err(SemanticError::RankTooLarge { rank, max });
    }
    let svd = matrix.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    order.truncate(rank);
    let mut components = DMatrix::zeros(matrix.ncols(), rank);
    for (j, &src) in order.iter().enumerate() {
        components.set_column(j, &v_t.row(src).transpose());
    }
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let reduced = matrix * &components;
    Ok((
        reduced,
        SvdProjection {
            components,
            singular_values,
        },
    ))
}
