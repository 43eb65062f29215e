//! Exact Shapley attributions by full subset enumeration.
//!
//! The value of a coalition `S` for row `x` is the mean model output over the
//! background rows with the features in `S` taken from `x` (interventional
//! expectation). One row costs `2^p · |B|` model evaluations.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::models::Regressor;
use crate::stats::pearson;

pub const MAX_FEATURES: usize = 15;
pub const DEFAULT_BACKGROUND: usize = 100;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{0} features exceed the exact enumeration limit of {MAX_FEATURES}")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no rows to explain")]
    EmptyRows,
    #[error("feature roster {given:?} does not match the model's {model:?}")]
    Roster { given: Vec<String>, model: Vec<String> },
    #[error("row has {got} values, expected {expected}")]
    RowWidth { got: usize, expected: usize },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapConfig {
    pub features: Vec<String>,
    pub background: Vec<Vec<f64>>,
}

impl ShapConfig {
    pub fn new(
        model_features: &[String],
        features: Vec<String>,
        background: Vec<Vec<f64>>,
    ) -> Result<Self, ExplainError> {
        if features != model_features {
            return Err(ExplainError::Roster { given: features, model: model_features.to_vec() });
        }
        if features.len() > MAX_FEATURES {
            return Err(ExplainError::TooManyFeatures(features.len()));
        }
        if background.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        if let Some(r) = background.iter().find(|r| r.len() != features.len()) {
            return Err(ExplainError::RowWidth { got: r.len(), expected: features.len() });
        }
        Ok(Self { features, background })
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }
}

/// `n` rows drawn without replacement (all rows when `n` ≥ the pool),
/// kept in their original order.
pub fn sample_background(rows: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    if n >= rows.len() {
        return rows.to_vec();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), rows.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapExplanation {
    pub row: Vec<f64>,
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
}

impl ShapExplanation {
    /// base + Σφ − prediction
    pub fn local_accuracy_gap(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>() - self.prediction
    }
}

/// Weight of a coalition of size `s` (not containing j) among `p` features:
/// s!(p−s−1)!/p!.
pub fn shapley_weight(p: usize, s: usize) -> f64 {
    assert!(s < p);
    // 1 / (p · C(p−1, s))
    let mut binom = 1.0;
    for k in 0..s {
        binom = binom * (p - 1 - k) as f64 / (k + 1) as f64;
    }
    1.0 / (p as f64 * binom)
}

/// Coalition values v(S) for every bitmask S.
fn coalition_values(model: &dyn Regressor, row: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let p = row.len();
    let mut values = vec![0.0; 1 << p];
    let mut mixed = vec![0.0; p];
    for (mask, v) in values.iter_mut().enumerate() {
        let mut total = 0.0;
        for b in background {
            for j in 0..p {
                mixed[j] = if mask >> j & 1 == 1 { row[j] } else { b[j] };
            }
            total += model.predict_row(&mixed);
        }
        *v = total / background.len() as f64;
    }
    values
}

pub fn shapley_exact(model: &dyn Regressor, row: &[f64], config: &ShapConfig) -> Result<ShapExplanation, ExplainError> {
    let p = config.p();
    if row.len() != p {
        return Err(ExplainError::RowWidth { got: row.len(), expected: p });
    }
    let v = coalition_values(model, row, &config.background);
    let weights: Vec<f64> = (0..p).map(|s| shapley_weight(p, s)).collect();
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        let mut acc = 0.0;
        for mask in (0..1usize << p).filter(|m| m & bit == 0) {
            acc += weights[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
        }
        *phi_j = acc;
    }
    Ok(ShapExplanation { row: row.to_vec(), phi, base_value: v[0], prediction: model.predict_row(row) })
}

/// Explains rows in parallel; output order matches input order.
pub fn explain_rows(
    model: &dyn Regressor,
    rows: &[Vec<f64>],
    config: &ShapConfig,
    workers: usize,
) -> Result<Vec<ShapExplanation>, ExplainError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExplainError::Pool(e.to_string()))?;
    pool.install(|| rows.par_iter().map(|r| shapley_exact(model, r, config)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
    /// Correlation between feature value and φ; `None` when either is constant.
    pub direction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapSummary {
    /// Sorted by descending mean |φ|; ties keep roster order.
    pub ranking: Vec<FeatureImportance>,
    pub rows: usize,
}

impl ShapSummary {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().position(|f| f.feature == feature)
    }
}

pub fn summarize_explanations(features: &[String], explanations: &[ShapExplanation]) -> Result<ShapSummary, ExplainError> {
    if explanations.is_empty() {
        return Err(ExplainError::EmptyRows);
    }
    let n = explanations.len() as f64;
    let mut ranking: Vec<FeatureImportance> = features
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let values: Vec<f64> = explanations.iter().map(|e| e.row[j]).collect();
            let phis: Vec<f64> = explanations.iter().map(|e| e.phi[j]).collect();
            FeatureImportance {
                feature: name.clone(),
                mean_abs_phi: phis.iter().map(|v| v.abs()).sum::<f64>() / n,
                direction: pearson(&values, &phis),
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    Ok(ShapSummary { ranking, rows: explanations.len() })
}

pub fn shap_summary(
    model: &dyn Regressor,
    rows: &[Vec<f64>],
    config: &ShapConfig,
    workers: usize,
) -> Result<(Vec<ShapExplanation>, ShapSummary), ExplainError> {
    if rows.is_empty() {
        return Err(ExplainError::EmptyRows);
    }
    let explanations = explain_rows(model, rows, config, workers)?;
    let summary = summarize_explanations(&config.features, &explanations)?;
    Ok((explanations, summary))
}

/// (feature value, φ) per explained row.
pub fn dependence_export(
    features: &[String],
    explanations: &[ShapExplanation],
    feature: &str,
) -> Result<Vec<(f64, f64)>, ExplainError> {
    let j = features.iter().position(|f| f == feature).ok_or_else(|| ExplainError::UnknownFeature(feature.into()))?;
    Ok(explanations.iter().map(|e| (e.row[j], e.phi[j])).collect())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, ExplainError> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Writes `phi.csv`, `summary.csv` and one `dependence_<feature>.csv` per feature.
pub fn write_outputs(
    dir: &Path,
    ids: &[String],
    features: &[String],
    explanations: &[ShapExplanation],
    summary: &ShapSummary,
) -> Result<(), ExplainError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv_writer(&dir.join("phi.csv"))?;
    let mut header = vec!["id".to_string(), "base_value".into(), "prediction".into()];
    header.extend(features.iter().map(|f| format!("phi_{f}")));
    w.write_record(&header)?;
    for (id, e) in ids.iter().zip(explanations) {
        let mut rec = vec![id.clone(), e.base_value.to_string(), e.prediction.to_string()];
        rec.extend(e.phi.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    w.write_record(["rank", "feature", "mean_abs_phi", "direction"])?;
    for (k, f) in summary.ranking.iter().enumerate() {
        let dir = f.direction.map_or(String::new(), |d| d.to_string());
        w.write_record([(k + 1).to_string(), f.feature.clone(), f.mean_abs_phi.to_string(), dir])?;
    }
    w.flush()?;

    for f in features {
        let mut w = csv_writer(&dir.join(format!("dependence_{f}.csv")))?;
        w.write_record([f.as_str(), "phi"])?;
        for (x, phi) in dependence_export(features, explanations, f)? {
            w.write_record([x.to_string(), phi.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_tree, Dataset, Node, TreeParams};
    use crate::stats::spearman;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    struct Closure<F: Fn(&[f64]) -> f64 + Send + Sync>(F, usize);

    impl<F: Fn(&[f64]) -> f64 + Send + Sync> Regressor for Closure<F> {
        fn predict_row(&self, x: &[f64]) -> f64 {
            (self.0)(x)
        }
        fn n_features(&self) -> usize {
            self.1
        }
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    fn config(p: usize, background: Vec<Vec<f64>>) -> ShapConfig {
        ShapConfig::new(&names(p), names(p), background).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        for p in 1..=MAX_FEATURES {
            let total: f64 = (0..p).map(|s| shapley_weight(p, s) * binomial(p - 1, s)).sum();
            assert!((total - 1.0).abs() < 1e-12, "p={p} total={total}");
        }
        // s!(p−s−1)!/p! by factorials
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        for s in 0..7 {
            assert!((shapley_weight(7, s) - fact(s) * fact(6 - s) / fact(7)).abs() < 1e-15);
        }
    }

    fn binomial(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let m = Closure(|_: &[f64]| 3.5, 4);
        let c = config(4, random_rows(10, 4, 1));
        let e = shapley_exact(&m, &[1.0, 2.0, 3.0, 4.0], &c).unwrap();
        assert!(e.phi.iter().all(|v| *v == 0.0));
        assert_eq!(e.base_value, 3.5);
    }

    #[test]
    fn linear_model_closed_form() {
        let beta = [0.7, -1.3, 2.1, 0.0, 0.4, -0.2, 1.1];
        let m = Closure(move |x: &[f64]| 0.5 + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>(), 7);
        let bg = random_rows(25, 7, 2);
        let c = config(7, bg.clone());
        for row in random_rows(5, 7, 3) {
            let e = shapley_exact(&m, &row, &c).unwrap();
            for j in 0..7 {
                let mean_b = bg.iter().map(|b| b[j]).sum::<f64>() / bg.len() as f64;
                assert!((e.phi[j] - beta[j] * (row[j] - mean_b)).abs() < 1e-10);
            }
            assert!(e.local_accuracy_gap().abs() < 1e-10);
        }
    }

    #[test]
    fn matches_permutation_definition() {
        // average marginal contribution over all orderings of 4 features
        let m = Closure(|x: &[f64]| x[0] * x[1] + (x[2] - x[3]).max(0.0) + x[0] * x[2] * x[3], 4);
        let bg = random_rows(6, 4, 4);
        let c = config(4, bg.clone());
        let row = vec![1.2, -0.7, 0.4, 2.0];
        let e = shapley_exact(&m, &row, &c).unwrap();
        let v = |set: &[usize]| {
            bg.iter()
                .map(|b| {
                    let x: Vec<f64> = (0..4).map(|j| if set.contains(&j) { row[j] } else { b[j] }).collect();
                    m.predict_row(&x)
                })
                .sum::<f64>()
                / bg.len() as f64
        };
        let mut phi = [0.0; 4];
        let mut perms = 0;
        let mut order = [0, 1, 2, 3];
        permute(&mut order, 0, &mut |o| {
            perms += 1;
            for k in 0..4 {
                phi[o[k]] += v(&o[..=k]) - v(&o[..k]);
            }
        });
        for j in 0..4 {
            assert!((e.phi[j] - phi[j] / perms as f64).abs() < 1e-10);
        }
    }

    fn permute(a: &mut [usize; 4], k: usize, f: &mut impl FnMut(&[usize; 4])) {
        if k == a.len() {
            f(a);
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            permute(a, k + 1, f);
            a.swap(k, i);
        }
    }

    #[test]
    fn unused_tree_feature_is_dummy() {
        let rows = random_rows(200, 3, 5);
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 + (r[2] > 0.0) as u8 as f64).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], 0.0, r[2]]).collect();
        let d = Dataset::new(x, y, names(3), (0..200).map(|i| i.to_string()).collect()).unwrap();
        let tree = fit_tree(&d, TreeParams { max_depth: Some(4), ..Default::default() }, 0).unwrap();
        assert!(tree.nodes.iter().all(|n| !matches!(n, Node::Split { feature: 1, .. })));
        struct T(crate::models::Tree);
        impl Regressor for T {
            fn predict_row(&self, x: &[f64]) -> f64 {
                self.0.predict_row(x)
            }
            fn n_features(&self) -> usize {
                3
            }
        }
        let c = config(3, random_rows(20, 3, 6));
        for row in random_rows(10, 3, 7) {
            assert_eq!(shapley_exact(&T(tree.clone()), &row, &c).unwrap().phi[1], 0.0);
        }
    }

    #[test]
    fn symmetric_features_share_credit() {
        let m = Closure(|x: &[f64]| (x[0] + x[1]).powi(2) + x[2], 3);
        // background symmetric in features 0 and 1
        let mut bg = random_rows(10, 3, 8);
        let swapped: Vec<Vec<f64>> = bg.iter().map(|r| vec![r[1], r[0], r[2]]).collect();
        bg.extend(swapped);
        let c = config(3, bg);
        let e = shapley_exact(&m, &[0.8, 0.8, -1.0], &c).unwrap();
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-9);
    }

    #[test]
    fn refuses_large_rosters() {
        let p = 16;
        let err = ShapConfig::new(&names(p), names(p), random_rows(2, p, 9)).unwrap_err();
        assert!(matches!(err, ExplainError::TooManyFeatures(16)));
        assert!(ShapConfig::new(&names(3), names(2), random_rows(2, 2, 9)).is_err());
        assert!(ShapConfig::new(&names(2), names(2), vec![]).is_err());
    }

    #[test]
    fn summary_ranks_single_feature_first() {
        let m = Closure(|x: &[f64]| 3.0 * x[2], 4);
        let c = config(4, random_rows(15, 4, 10));
        let (ex, s) = shap_summary(&m, &random_rows(30, 4, 11), &c, 2).unwrap();
        assert_eq!(s.ranking[0].feature, "f2");
        assert!(s.ranking[1..].iter().all(|f| f.mean_abs_phi == 0.0));
        assert!(s.ranking[0].direction.unwrap() > 0.99);
        assert_eq!(ex.len(), 30);
        let mean_pred = ex.iter().map(|e| e.prediction).sum::<f64>() / 30.0;
        let mean_recon = ex.iter().map(|e| e.base_value + e.phi.iter().sum::<f64>()).sum::<f64>() / 30.0;
        assert!((mean_pred - mean_recon).abs() < 1e-8);
        assert!(shap_summary(&m, &[], &c, 1).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let m = Closure(|x: &[f64]| x[0].sin() * x[1] + x[2], 3);
        let c = config(3, random_rows(10, 3, 12));
        let rows = random_rows(40, 3, 13);
        assert_eq!(explain_rows(&m, &rows, &c, 1).unwrap(), explain_rows(&m, &rows, &c, 4).unwrap());
    }

    #[test]
    fn dependence_is_monotone_and_stepped() {
        let m = Closure(|x: &[f64]| x[0].powi(3) + 2.0 * x[1].round() - x[2], 3);
        let mut rows = random_rows(100, 3, 14);
        rows.iter_mut().for_each(|r| r[1] = (r[1] * 2.0).round());
        let c = config(3, sample_background(&rows, 20, 1));
        let (ex, _) = shap_summary(&m, &rows, &c, 2).unwrap();
        let dep = dependence_export(&c.features, &ex, "f0").unwrap();
        assert_eq!(dep.len(), rows.len());
        let (xs, ps): (Vec<f64>, Vec<f64>) = dep.into_iter().unzip();
        assert!(spearman(&xs, &ps).unwrap() > 0.99);
        // integer feature: one φ value per level
        let dep = dependence_export(&c.features, &ex, "f1").unwrap();
        for (x, phi) in &dep {
            for (x2, phi2) in &dep {
                if x == x2 {
                    assert!((phi - phi2).abs() < 1e-12);
                }
            }
        }
        assert!(dependence_export(&c.features, &ex, "nope").is_err());
    }

    #[test]
    fn background_sampling_is_seeded() {
        let rows = random_rows(500, 2, 15);
        let a = sample_background(&rows, 100, 7);
        assert_eq!(a.len(), 100);
        assert_eq!(a, sample_background(&rows, 100, 7));
        assert_ne!(a, sample_background(&rows, 100, 8));
        assert_eq!(sample_background(&rows[..50], 100, 7).len(), 50);
    }

    #[test]
    fn writes_csv_outputs() {
        let m = Closure(|x: &[f64]| x[0] - x[1], 2);
        let c = config(2, random_rows(5, 2, 16));
        let rows = random_rows(4, 2, 17);
        let (ex, s) = shap_summary(&m, &rows, &c, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = (0..4).map(|i| format!("r{i}")).collect();
        write_outputs(dir.path(), &ids, &c.features, &ex, &s).unwrap();
        let phi = std::fs::read_to_string(dir.path().join("phi.csv")).unwrap();
        assert_eq!(phi.lines().count(), 5);
        assert!(phi.starts_with("id,base_value,prediction,phi_f0,phi_f1\n"));
        assert_eq!(std::fs::read_to_string(dir.path().join("dependence_f1.csv")).unwrap().lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn local_accuracy(seed in 0u64..10_000, p in 1usize..7) {
            let m = Closure(|x: &[f64]| x.iter().enumerate().map(|(j, v)| (v * (j as f64 + 1.0)).tanh()).product::<f64>() + x[0], 0);
            let c = config(p, random_rows(8, p, seed));
            let row = &random_rows(1, p, seed + 1)[0];
            let e = shapley_exact(&m, row, &c).unwrap();
            prop_assert!(e.local_accuracy_gap().abs() < 1e-6);
        }
    }
}
