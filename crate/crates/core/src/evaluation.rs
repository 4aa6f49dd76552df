//! Per-relation and micro-averaged scores, PR curves and the k-sweep.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::RelationInstance;
use crate::classifier::{prf, score_all, sweep_threshold, train, ClassifierError, Model, TrainConfig};
use crate::propagation::{assemble_training_set, RankedPattern, Representation, Schedule};

pub const DEFAULT_RESAMPLES: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for unknown instance `{instance_id}` of `{relation}`")]
    UnknownInstance { relation: String, instance_id: String },
    #[error("duplicate prediction for `{instance_id}` of `{relation}`")]
    DuplicatePrediction { relation: String, instance_id: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Propagation(#[from] crate::propagation::PropagationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub relation: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalRecord {
    pub fn from_counts(relation: &str, tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f1) = prf(tp, fp, fn_);
        EvalRecord {
            relation: relation.to_string(),
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub relation: String,
    pub instance_id: String,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub relation: String,
    pub instance_id: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_relation: Vec<EvalRecord>,
    pub micro: EvalRecord,
}

impl EvalReport {
    fn macro_mean(&self, f: impl Fn(&EvalRecord) -> f64) -> f64 {
        if self.per_relation.is_empty() {
            return 0.0;
        }
        self.per_relation.iter().map(f).sum::<f64>() / self.per_relation.len() as f64
    }

    pub fn macro_precision(&self) -> f64 {
        self.macro_mean(|r| r.precision)
    }

    pub fn macro_recall(&self) -> f64 {
        self.macro_mean(|r| r.recall)
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_mean(|r| r.f1)
    }

    pub fn write_tsv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "relation\ttp\tfp\tfn\tprecision\trecall\tf1")?;
        for r in self.per_relation.iter().chain(std::iter::once(&self.micro)) {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                r.relation, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1
            )?;
        }
        Ok(())
    }
}

pub const MICRO: &str = "MICRO";

/// Scores predictions against gold labels. Gold instances without a
/// prediction count as predicted negative.
pub fn evaluate(predictions: &[Prediction], gold: &[GoldLabel]) -> Result<EvalReport, EvalError> {
    let gold_map: HashMap<(&str, &str), bool> = gold
        .iter()
        .map(|g| ((g.relation.as_str(), g.instance_id.as_str()), g.label))
        .collect();
    let mut predicted: HashMap<(&str, &str), bool> = HashMap::new();
    for p in predictions {
        let key = (p.relation.as_str(), p.instance_id.as_str());
        if !gold_map.contains_key(&key) {
            return Err(EvalError::UnknownInstance {
                relation: p.relation.clone(),
                instance_id: p.instance_id.clone(),
            });
        }
        if predicted.insert(key, p.positive).is_some() {
            return Err(EvalError::DuplicatePrediction {
                relation: p.relation.clone(),
                instance_id: p.instance_id.clone(),
            });
        }
    }
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (&(relation, id), &label) in &gold_map {
        let c = counts.entry(relation).or_default();
        match (predicted.get(&(relation, id)).copied().unwrap_or(false), label) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => {}
        }
    }
    let per_relation: Vec<EvalRecord> = counts
        .iter()
        .map(|(r, &(tp, fp, fn_))| EvalRecord::from_counts(r, tp, fp, fn_))
        .collect();
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(EvalReport {
        per_relation,
        micro: EvalRecord::from_counts(MICRO, tp, fp, fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Points for every distinct score, from the highest threshold down.
pub fn pr_curve(scored: &[(f64, bool)]) -> Vec<PrPoint> {
    sweep_threshold(scored)
        .rows
        .into_iter()
        .map(|r| PrPoint {
            threshold: r.threshold,
            recall: r.recall,
            precision: r.precision,
        })
        .collect()
}

pub fn write_pr_csv<W: Write>(out: &mut W, points: &[PrPoint]) -> std::io::Result<()> {
    writeln!(out, "threshold,recall,precision")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.recall, p.precision)?;
    }
    Ok(())
}

pub fn write_pr_svg<W: Write>(out: &mut W, title: &str, points: &[PrPoint]) -> std::io::Result<()> {
    const W: f64 = 400.0;
    const H: f64 = 300.0;
    const M: f64 = 40.0;
    let x = |r: f64| M + r * (W - 2.0 * M);
    let y = |p: f64| H - M - p * (H - 2.0 * M);
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.recall), y(p.precision)))
        .collect();
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#)?;
    writeln!(out, r#"  <text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0)?;
    writeln!(
        out,
        r#"  <rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    )?;
    writeln!(out, r#"  <text x="{}" y="{}" text-anchor="middle">recall</text>"#, W / 2.0, H - 10.0)?;
    writeln!(out, r#"  <text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">precision</text>"#, H / 2.0, H / 2.0)?;
    writeln!(out, r#"  <polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, path.join(" "))?;
    writeln!(out, "</svg>")
}

/// One relation's material for the k-sweep. Instances carry features.
pub struct SweepData<'a> {
    pub relation: &'a str,
    pub kept: &'a [RelationInstance],
    pub discarded: &'a [RelationInstance],
    pub negatives: &'a [RelationInstance],
    pub rankings: &'a BTreeMap<Representation, Vec<RankedPattern>>,
    pub dev: &'a [(Vec<String>, bool)],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_max: usize,
    pub resamples: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub representation: Representation,
    pub train_positives: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub f1s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub relation: String,
    pub cells: Vec<SweepCell>,
    pub selected_k: usize,
    pub selected_representation: Representation,
}

impl SweepResult {
    pub fn cell(&self, k: usize, representation: Representation) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.k == k && c.representation == representation)
    }

    pub fn selected(&self) -> &SweepCell {
        self.cell(self.selected_k, self.selected_representation)
            .expect("selected cell exists")
    }
}

pub fn write_sweep_tsv<W: Write>(out: &mut W, results: &[SweepResult]) -> std::io::Result<()> {
    writeln!(out, "relation\tk\trepresentation\ttrain_positives\tmean_f1\tstd_f1\tselected")?;
    for r in results {
        for c in &r.cells {
            let sel = c.k == r.selected_k && c.representation == r.selected_representation;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
                r.relation,
                c.k,
                c.representation,
                c.train_positives,
                c.mean_f1,
                c.std_f1,
                if sel { "*" } else { "" }
            )?;
        }
    }
    Ok(())
}

/// Bootstrap resample of the negatives; resample `r` is shared by every
/// cell so cells are compared on the same draws.
pub fn resample_negatives(negatives: &[RelationInstance], seed: u64, r: usize) -> Vec<&RelationInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..negatives.len())
        .map(|_| &negatives[rng.random_range(0..negatives.len())])
        .collect()
}

pub fn training_data<'a>(
    positives: impl IntoIterator<Item = &'a RelationInstance>,
    negatives: impl IntoIterator<Item = &'a RelationInstance>,
) -> Vec<(Vec<String>, bool)> {
    positives
        .into_iter()
        .map(|i| (i.features.clone(), true))
        .chain(negatives.into_iter().map(|i| (i.features.clone(), false)))
        .collect()
}

/// Positive training set for step `k` under `representation`.
pub fn positives_at<'a>(
    data: &SweepData<'a>,
    representation: Representation,
    k: usize,
    k_max: usize,
) -> Result<Vec<RelationInstance>, EvalError> {
    let schedule = Schedule::new(data.kept.len(), data.kept.len() + data.discarded.len(), k_max, k)?;
    let empty = Vec::new();
    let ranking = data.rankings.get(&representation).unwrap_or(&empty);
    Ok(assemble_training_set(data.kept, data.discarded, ranking, &schedule))
}

/// Trains and scores every `(k, representation)` cell on the dev set and
/// selects the best mean dev F1, preferring smaller `k` on ties.
pub fn k_sweep(data: &SweepData<'_>, config: &SweepConfig) -> Result<SweepResult, EvalError> {
    let reprs: Vec<Representation> = data.rankings.keys().copied().collect();
    let mut cells_spec: Vec<(usize, Representation, Vec<RelationInstance>)> = Vec::new();
    for &repr in &reprs {
        for k in 0..=config.k_max {
            cells_spec.push((k, repr, positives_at(data, repr, k, config.k_max)?));
        }
    }

    // Identical positive sets (k = 0, k = K) are trained once.
    let mut distinct: Vec<Vec<&str>> = Vec::new();
    let mut cell_set: Vec<usize> = Vec::new();
    for (_, _, pos) in &cells_spec {
        let mut ids: Vec<&str> = pos.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        let idx = distinct.iter().position(|d| *d == ids).unwrap_or_else(|| {
            distinct.push(ids);
            distinct.len() - 1
        });
        cell_set.push(idx);
    }
    let representative: Vec<usize> = (0..distinct.len())
        .map(|d| cell_set.iter().position(|&c| c == d).expect("every set has a cell"))
        .collect();
    let resamples: Vec<Vec<&RelationInstance>> = (0..config.resamples.max(1))
        .map(|r| resample_negatives(data.negatives, config.seed, r))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..distinct.len())
        .flat_map(|d| (0..resamples.len()).map(move |r| (d, r)))
        .collect();
    let scores: Vec<Result<f64, EvalError>> = jobs
        .par_iter()
        .map(|&(d, r)| {
            let pos = &cells_spec[representative[d]].2;
            let train_set = training_data(pos, resamples[r].iter().copied());
            let model = train(data.relation, &train_set, &config.train)?;
            Ok(sweep_threshold(&score_all(&model, data.dev)).best.f1)
        })
        .collect();
    let mut f1_table = vec![vec![0.0; resamples.len()]; distinct.len()];
    for (&(d, r), s) in jobs.iter().zip(scores) {
        f1_table[d][r] = s?;
    }

    let cells: Vec<SweepCell> = cells_spec
        .iter()
        .zip(&cell_set)
        .map(|((k, repr, pos), &d)| {
            let f1s = f1_table[d].clone();
            let (mean, std) = mean_std(&f1s);
            SweepCell {
                k: *k,
                representation: *repr,
                train_positives: pos.len(),
                mean_f1: mean,
                std_f1: std,
                f1s,
            }
        })
        .collect();
    let best = cells
        .iter()
        .fold(None::<&SweepCell>, |best, c| match best {
            Some(b) if b.mean_f1 > c.mean_f1 || (b.mean_f1 == c.mean_f1 && (b.k, b.representation) <= (c.k, c.representation)) => Some(b),
            _ => Some(c),
        })
        .expect("at least one cell");
    Ok(SweepResult {
        relation: data.relation.to_string(),
        selected_k: best.k,
        selected_representation: best.representation,
        cells,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains the final model for one cell on the full negative set and
/// returns it with its dev-optimal threshold.
pub fn train_cell(
    data: &SweepData<'_>,
    representation: Representation,
    k: usize,
    config: &SweepConfig,
) -> Result<(Model, f64), EvalError> {
    let pos = positives_at(data, representation, k, config.k_max)?;
    let model = train(data.relation, &training_data(&pos, data.negatives), &config.train)?;
    let threshold = sweep_threshold(&score_all(&model, data.dev)).best.threshold;
    Ok((model, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn pred(r: &str, id: &str, p: bool) -> Prediction {
        Prediction {
            relation: r.into(),
            instance_id: id.into(),
            positive: p,
        }
    }

    fn gold(r: &str, id: &str, l: bool) -> GoldLabel {
        GoldLabel {
            relation: r.into(),
            instance_id: id.into(),
            label: l,
        }
    }

    #[test]
    fn single_relation_counts() {
        let g = [gold("r", "1", true), gold("r", "2", true), gold("r", "3", false), gold("r", "4", true)];
        let p = [pred("r", "1", true), pred("r", "2", true), pred("r", "3", true), pred("r", "4", false)];
        let rep = evaluate(&p, &g).unwrap();
        let r = &rep.per_relation[0];
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 1));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.micro.f1, r.f1);
    }

    #[test]
    fn micro_differs_from_macro() {
        let g = [gold("a", "1", true), gold("a", "2", true), gold("b", "1", true), gold("b", "2", false)];
        let p = [pred("a", "1", true), pred("a", "2", false), pred("b", "1", true), pred("b", "2", true)];
        let rep = evaluate(&p, &g).unwrap();
        assert_eq!((rep.per_relation[0].tp, rep.per_relation[0].fp, rep.per_relation[0].fn_), (1, 0, 1));
        assert_eq!((rep.per_relation[1].tp, rep.per_relation[1].fp, rep.per_relation[1].fn_), (1, 1, 0));
        for x in [rep.micro.precision, rep.micro.recall, rep.micro.f1] {
            assert!((x - 2.0 / 3.0).abs() < 1e-12);
        }
        // Both relations have F1 = 2/3; the macro means of P and R are 3/4.
        assert_eq!(rep.macro_precision(), 0.75);
        assert_eq!(rep.macro_recall(), 0.75);
        assert!((rep.macro_precision() - rep.micro.precision).abs() > 1e-12);
    }

    #[test]
    fn unknown_and_duplicate_predictions_fail() {
        let g = [gold("a", "1", true)];
        assert!(matches!(evaluate(&[pred("a", "9", true)], &g), Err(EvalError::UnknownInstance { .. })));
        assert!(matches!(
            evaluate(&[pred("a", "1", true), pred("a", "1", false)], &g),
            Err(EvalError::DuplicatePrediction { .. })
        ));
        assert_eq!(evaluate(&[], &g).unwrap().micro.fn_, 1);
    }

    #[test]
    fn pr_curve_endpoints() {
        let perfect = [(0.9, true), (0.7, true), (0.2, false), (0.1, false)];
        assert!(pr_curve(&perfect).iter().any(|p| p.recall == 1.0 && p.precision == 1.0));
        let inverted = [(0.9, false), (0.7, false), (0.2, true), (0.1, true)];
        let last = *pr_curve(&inverted).last().unwrap();
        assert_eq!((last.recall, last.precision), (1.0, 0.5));
    }

    #[test]
    fn pr_curve_matches_brute_force() {
        let pts = [
            (0.91, true), (0.85, false), (0.85, true), (0.7, true), (0.66, false),
            (0.5, false), (0.42, true), (0.3, false), (0.2, true), (0.05, false),
        ];
        let curve = pr_curve(&pts);
        let total_pos = pts.iter().filter(|p| p.1).count();
        for c in &curve {
            let tp = pts.iter().filter(|p| p.0 >= c.threshold && p.1).count();
            let fp = pts.iter().filter(|p| p.0 >= c.threshold && !p.1).count();
            assert_eq!(c.precision, tp as f64 / (tp + fp) as f64);
            assert_eq!(c.recall, tp as f64 / total_pos as f64);
        }
        assert_eq!(curve.len(), 9);
        assert!(curve.windows(2).all(|w| w[0].recall <= w[1].recall));
    }

    #[test]
    fn svg_and_csv_render() {
        let pts = pr_curve(&[(0.9, true), (0.1, false)]);
        let mut svg = Vec::new();
        write_pr_svg(&mut svg, "per:title <x>", &pts).unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("&lt;x&gt;"));
        let mut csv = Vec::new();
        write_pr_csv(&mut csv, &pts).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn mean_std_single_sample() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    proptest! {
        #[test]
        fn evaluate_is_order_invariant(
            labels in proptest::collection::vec((0usize..3, any::<bool>(), any::<bool>()), 1..40),
            seed in any::<u64>(),
        ) {
            let g: Vec<GoldLabel> = labels.iter().enumerate().map(|(i, (r, l, _))| gold(&format!("r{r}"), &i.to_string(), *l)).collect();
            let p: Vec<Prediction> = labels.iter().enumerate().map(|(i, (r, _, y))| pred(&format!("r{r}"), &i.to_string(), *y)).collect();
            let mut shuffled = p.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let a = evaluate(&p, &g).unwrap();
            let b = evaluate(&shuffled, &g).unwrap();
            prop_assert_eq!(&a, &b);
            if a.per_relation.len() == 1 {
                prop_assert_eq!(a.micro.f1, a.per_relation[0].f1);
            }
        }
    }
}
