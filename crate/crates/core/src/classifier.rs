//! Binary L2-regularised logistic regression over sparse binary features.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training data for `{0}` has a single class")]
    SingleClass(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Feature string ↔ contiguous id, frozen after `fit`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureIndex {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl FeatureIndex {
    pub fn fit<'a, I, F>(bags: I) -> Self
    where
        I: IntoIterator<Item = F>,
        F: IntoIterator<Item = &'a String>,
    {
        let set: BTreeSet<&String> = bags.into_iter().flatten().collect();
        Self::from_names(set.into_iter().cloned().collect())
    }

    fn from_names(names: Vec<String>) -> Self {
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        FeatureIndex { names, ids }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, feature: &str) -> Option<usize> {
        self.ids.get(feature).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    /// Sorted, deduplicated ids of the known features.
    pub fn encode<S: AsRef<str>>(&self, features: &[S]) -> Vec<usize> {
        let set: BTreeSet<usize> = features.iter().filter_map(|f| self.id(f.as_ref())).collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<usize>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub neg_weight: f64,
    pub step: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1e-3,
            neg_weight: 1.0,
            step: 0.1,
            epochs: 500,
            seed: 13,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(ClassifierError::Config("l2_lambda must be a non-negative number".into()));
        }
        if !(self.neg_weight > 0.0 && self.neg_weight.is_finite()) {
            return Err(ClassifierError::Config("neg_weight must be positive".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(ClassifierError::Config("step must be positive".into()));
        }
        Ok(())
    }
}

pub const DEFAULT_NEG_WEIGHT_GRID: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

/// Overflow-free logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted mean logistic loss plus `λ/2 ‖w‖²` and its gradient.
/// `params` holds the weights followed by the bias; the bias is not
/// regularised.
pub fn loss_and_gradient(params: &[f64], examples: &[Example], l2_lambda: f64, neg_weight: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let bias = params[dim];
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut total = 0.0;
    for ex in examples {
        let weight = if ex.label { 1.0 } else { neg_weight };
        let z = bias + ex.features.iter().map(|&f| params[f]).sum::<f64>();
        let y = if ex.label { 1.0 } else { 0.0 };
        loss += weight * (softplus(z) - y * z);
        let g = weight * (sigmoid(z) - y);
        for &f in &ex.features {
            grad[f] += g;
        }
        grad[dim] += g;
        total += weight;
    }
    loss /= total;
    grad.iter_mut().for_each(|g| *g /= total);
    let sq: f64 = params[..dim].iter().map(|w| w * w).sum();
    loss += 0.5 * l2_lambda * sq;
    for (g, w) in grad[..dim].iter_mut().zip(&params[..dim]) {
        *g += l2_lambda * w;
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub relation: String,
    pub index: FeatureIndex,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    /// Training loss before each epoch, then the final loss.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    relation: String,
    bias: f64,
    l2_lambda: f64,
    neg_weight: f64,
    step: f64,
    epochs: usize,
    seed: u64,
    weights: BTreeMap<String, f64>,
}

impl Serialize for Model {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelFile {
            relation: self.relation.clone(),
            bias: self.bias,
            l2_lambda: self.config.l2_lambda,
            neg_weight: self.config.neg_weight,
            step: self.config.step,
            epochs: self.config.epochs,
            seed: self.config.seed,
            weights: self.index.names.iter().cloned().zip(self.weights.iter().copied()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = ModelFile::deserialize(d)?;
        let (names, weights): (Vec<String>, Vec<f64>) = f.weights.into_iter().unzip();
        Ok(Model {
            relation: f.relation,
            index: FeatureIndex::from_names(names),
            weights,
            bias: f.bias,
            config: TrainConfig {
                l2_lambda: f.l2_lambda,
                neg_weight: f.neg_weight,
                step: f.step,
                epochs: f.epochs,
                seed: f.seed,
            },
            loss_history: Vec::new(),
        })
    }
}

impl Model {
    pub fn score<S: AsRef<str>>(&self, features: &[S]) -> f64 {
        let ids = self.index.encode(features);
        self.bias + ids.iter().map(|&i| self.weights[i]).sum::<f64>()
    }

    pub fn predict_proba<S: AsRef<str>>(&self, features: &[S]) -> f64 {
        sigmoid(self.score(features))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Full-batch gradient descent from zero. The step is capped at `1/L` with
/// `L` the curvature bound of the objective, so the loss never increases.
pub fn train<S: AsRef<str>>(
    relation: &str,
    data: &[(Vec<S>, bool)],
    config: &TrainConfig,
) -> Result<Model, ClassifierError> {
    config.validate()?;
    let n_pos = data.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == data.len() {
        return Err(ClassifierError::SingleClass(relation.to_string()));
    }
    let index = {
        let set: BTreeSet<&str> = data.iter().flat_map(|(f, _)| f.iter().map(AsRef::as_ref)).collect();
        FeatureIndex::from_names(set.into_iter().map(str::to_string).collect())
    };
    let examples: Vec<Example> = data
        .iter()
        .map(|(f, y)| Example {
            features: index.encode(f),
            label: *y,
        })
        .collect();
    let max_sq = examples.iter().map(|e| e.features.len() + 1).max().unwrap_or(1) as f64;
    let lipschitz = max_sq / 4.0 + config.l2_lambda;
    let step = config.step.min(1.0 / lipschitz);

    let mut params = vec![0.0; index.len() + 1];
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grad) = loss_and_gradient(&params, &examples, config.l2_lambda, config.neg_weight);
        history.push(loss);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step * g;
        }
    }
    if config.epochs > 0 {
        history.push(loss_and_gradient(&params, &examples, config.l2_lambda, config.neg_weight).0);
    }
    let bias = params.pop().expect("bias slot");
    Ok(Model {
        relation: relation.to_string(),
        index,
        weights: params,
        bias,
        config: *config,
        loss_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    /// Descending threshold.
    pub rows: Vec<ThresholdRow>,
    pub best: ThresholdRow,
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// One row per distinct score; an example is predicted positive when its
/// score is at least the threshold. The best row maximises F1, preferring
/// the higher threshold on ties.
pub fn sweep_threshold(scored: &[(f64, bool)]) -> ThresholdSweep {
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = sorted.iter().filter(|(_, y)| *y).count();
    let mut rows = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (precision, recall, f1) = prf(tp, fp, total_pos - tp);
        rows.push(ThresholdRow {
            threshold: t,
            precision,
            recall,
            f1,
        });
    }
    let best = rows.iter().copied().fold(None::<ThresholdRow>, |best, r| match best {
        Some(b) if b.f1 >= r.f1 => Some(b),
        _ => Some(r),
    });
    ThresholdSweep {
        best: best.unwrap_or(ThresholdRow {
            threshold: 0.5,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }),
        rows,
    }
}

pub fn score_all<S: AsRef<str>>(model: &Model, data: &[(Vec<S>, bool)]) -> Vec<(f64, bool)> {
    data.iter().map(|(f, y)| (model.predict_proba(f), *y)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub neg_weight: f64,
    pub dev_f1: f64,
    pub threshold: f64,
}

/// Trains one model per `neg_weight` and keeps the one with the best dev
/// F1 (first on ties).
pub fn grid_search<S: AsRef<str>, T: AsRef<str>>(
    relation: &str,
    train_data: &[(Vec<S>, bool)],
    dev: &[(Vec<T>, bool)],
    base: &TrainConfig,
    grid: &[f64],
) -> Result<(Model, ThresholdSweep, Vec<GridResult>), ClassifierError> {
    let mut best: Option<(Model, ThresholdSweep)> = None;
    let mut table = Vec::new();
    for &w in grid {
        let cfg = TrainConfig { neg_weight: w, ..*base };
        let model = train(relation, train_data, &cfg)?;
        let sweep = sweep_threshold(&score_all(&model, dev));
        table.push(GridResult {
            neg_weight: w,
            dev_f1: sweep.best.f1,
            threshold: sweep.best.threshold,
        });
        if best.as_ref().is_none_or(|(_, s)| sweep.best.f1 > s.best.f1) {
            best = Some((model, sweep));
        }
    }
    let (model, sweep) = best.ok_or_else(|| ClassifierError::Config("empty neg_weight grid".into()))?;
    Ok((model, sweep, table))
}
