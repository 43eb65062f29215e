//! Regression models for the logP target: regularized linear models, tree
//! ensembles, and the two-tier stratified predictor, plus the shared data
//! handling, metrics and split logic.

mod cv;
mod linear;
mod persist;
mod stratified;
mod tree;
mod yeo_johnson;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::descriptors::DescriptorRow;
use crate::stats::quantile_sorted;

pub use cv::{cross_validate, default_grid, fold_assignment, CvResult, ModelFamily, ModelSpec, DEFAULT_LAMBDAS};
pub use linear::{
    fit_linear, fit_linear_lenient, fit_linear_transformed, fit_weighted_ridge, fit_wls, lambda_max, wls_weights,
    LinearModel, Penalty, SolverOptions, VarianceModel, WLS_EPSILON,
};
pub use persist::{read_model, read_model_file, write_model, write_model_file, MODEL_MAGIC};
pub use stratified::{
    fit_stratified, predict_stratified, routing_disagreement, training_route, Route, RoutingMode, StratifiedOptions,
    StratifiedPrediction, StratifiedPredictor,
};
pub use tree::{fit_forest, fit_gbm, fit_tree, EnsembleKind, ForestParams, GbmParams, Node, Tree, TreeEnsemble, TreeParams};
pub use yeo_johnson::{yeo_johnson_fit, YeoJohnson};

/// Modeling features, in column order. HeavyAtomCount is left out because
/// it is nearly collinear with MolWt.
pub const MODEL_FEATURES: [&str; 7] = [
    "MolWt",
    "TPSA",
    "NumHDonors",
    "NumHAcceptors",
    "NumRotatableBonds",
    "NumAromaticRings",
    "FractionCSP3",
];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset: {0}")]
    Data(String),
    #[error("feature {0} is constant in the training data")]
    ConstantFeature(String),
    #[error("coordinate descent did not converge in {iterations} sweeps (max change {max_change:e})")]
    NotConverged { iterations: usize, max_change: f64, last: Box<LinearModel> },
    #[error("linear system is singular")]
    Singular,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stratum {name} has {size} rows; at least {min} are required")]
    StratumTooSmall { name: &'static str, size: usize, min: usize },
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("model file header is {0:?}, expected {MODEL_MAGIC:?}")]
    Version(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Design matrix (row-major), target and bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        ids: Vec<String>,
    ) -> Result<Self, ModelError> {
        if x.len() != y.len() || ids.len() != y.len() {
            return Err(ModelError::Data(format!(
                "{} rows, {} targets, {} ids",
                x.len(),
                y.len(),
                ids.len()
            )));
        }
        if let Some(i) = x.iter().position(|r| r.len() != feature_names.len()) {
            return Err(ModelError::Data(format!("row {i} has {} features", x[i].len())));
        }
        if x.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(ModelError::Data("non-finite value".into()));
        }
        Ok(Self { x, y, feature_names, ids })
    }

    /// Builds the seven-feature modeling table from descriptor rows.
    pub fn from_rows(rows: &[DescriptorRow]) -> Result<Self, ModelError> {
        let x = rows
            .iter()
            .map(|r| {
                vec![
                    r.molwt,
                    r.tpsa,
                    r.num_h_donors as f64,
                    r.num_h_acceptors as f64,
                    r.num_rotatable_bonds as f64,
                    r.num_aromatic_rings as f64,
                    r.fraction_csp3,
                ]
            })
            .collect();
        let y = rows.iter().map(|r| r.logp_target).collect();
        let ids = rows
            .iter()
            .map(|r| if r.original_inchi.is_empty() { r.inchikey.clone() } else { r.original_inchi.clone() })
            .collect();
        Self::new(x, y, MODEL_FEATURES.iter().map(|s| s.to_string()).collect(), ids)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.p()).map(|j| self.column(j)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    pub fn with_target(&self, y: Vec<f64>) -> Self {
        Self { y, ..self.clone() }
    }
}

/// Anything that maps a feature row to a logP prediction.
pub trait Regressor: Send + Sync {
    fn predict_row(&self, x: &[f64]) -> f64;

    fn n_features(&self) -> usize;

    fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// Per-feature standardization (population standard deviation).
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &Dataset) -> Result<Self, ModelError> {
        let n = data.n() as f64;
        if data.n() < 2 {
            return Err(ModelError::Data("need at least 2 rows".into()));
        }
        let mut mean = vec![0.0; data.p()];
        let mut std = vec![0.0; data.p()];
        for j in 0..data.p() {
            let m = data.x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = data.x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            if !(var > 1e-24 * (1.0 + m * m)) {
                return Err(ModelError::ConstantFeature(data.feature_names[j].clone()));
            }
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// `None` when the evaluated targets have zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

pub fn metrics(predictions: &[f64], targets: &[f64]) -> Metrics {
    let n = targets.len();
    let mean = targets.iter().sum::<f64>() / n as f64;
    let (mut sse, mut sst, mut sae) = (0.0, 0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        sse += (t - p).powi(2);
        sst += (t - mean).powi(2);
        sae += (t - p).abs();
    }
    Metrics {
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        rmse: (sse / n as f64).sqrt(),
        mae: sae / n as f64,
        n,
    }
}

pub fn evaluate(model: &dyn Regressor, data: &Dataset) -> Metrics {
    metrics(&model.predict(&data.x), &data.y)
}

pub fn residuals(model: &dyn Regressor, data: &Dataset) -> Vec<f64> {
    model.predict(&data.x).iter().zip(&data.y).map(|(p, y)| y - p).collect()
}

/// Train/test row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Target bin of every row (after merging undersized bins).
    pub bins: Vec<usize>,
}

/// Stratified random split on target quantile bins. Bins with fewer than two
/// rows are merged into a neighbour.
pub fn split_stratified(y: &[f64], test_fraction: f64, bins: usize, seed: u64) -> Result<Split, ModelError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(ModelError::InvalidParameter(format!("test fraction {test_fraction}")));
    }
    if bins == 0 || y.len() < 2 * bins {
        return Err(ModelError::Data(format!("{} rows cannot fill {bins} bins of 2", y.len())));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| quantile_sorted(&sorted, k as f64 / bins as f64)).collect();
    let raw_bin = |v: f64| edges.partition_point(|e| *e < v);

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &v) in y.iter().enumerate() {
        members.entry(raw_bin(v)).or_default().push(i);
    }
    // merge undersized bins into the following (or, at the end, preceding) bin
    let mut groups: Vec<Vec<usize>> = members.into_values().collect();
    let mut i = 0;
    while i < groups.len() {
        if groups[i].len() < 2 && groups.len() > 1 {
            log::warn!("target bin with {} rows merged into neighbour", groups[i].len());
            let small = groups.remove(i);
            let into = if i < groups.len() { i } else { i - 1 };
            groups[into].extend(small);
            groups[into].sort_unstable();
            continue;
        }
        i += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: Vec::new(), test: Vec::new(), bins: vec![0; y.len()] };
    for (b, mut group) in groups.into_iter().enumerate() {
        group.iter().for_each(|&i| split.bins[i] = b);
        group.shuffle(&mut rng);
        let n_test = (test_fraction * group.len() as f64).round() as usize;
        split.test.extend_from_slice(&group[..n_test]);
        split.train.extend_from_slice(&group[n_test..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

pub const CATEGORY_LABELS: [&str; 5] = ["logP<0", "0<=logP<2", "2<=logP<4 (balanced)", "4<=logP<5", "logP>=5"];

pub fn logp_category(y: f64) -> usize {
    match y {
        v if v < 0.0 => 0,
        v if v < 2.0 => 1,
        v if v < 4.0 => 2,
        v if v < 5.0 => 3,
        _ => 4,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryError {
    pub label: &'static str,
    pub count: usize,
    pub median_abs_error: Option<f64>,
    pub iqr_abs_error: Option<f64>,
}

/// Absolute-error summaries per logP category; empty bins are kept.
pub fn report_error_by_category(predictions: &[f64], targets: &[f64]) -> Vec<CategoryError> {
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); CATEGORY_LABELS.len()];
    for (p, t) in predictions.iter().zip(targets) {
        errors[logp_category(*t)].push((t - p).abs());
    }
    errors
        .into_iter()
        .zip(CATEGORY_LABELS)
        .map(|(mut e, label)| {
            e.sort_by(f64::total_cmp);
            let q = |f: f64| (!e.is_empty()).then(|| quantile_sorted(&e, f));
            CategoryError {
                label,
                count: e.len(),
                median_abs_error: q(0.5),
                iqr_abs_error: q(0.75).zip(q(0.25)).map(|(a, b)| a - b),
            }
        })
        .collect()
}

/// SplitMix64 finalizer, used to derive independent per-tree seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fitted model of any family.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedModel {
    Linear(LinearModel),
    Ensemble(TreeEnsemble),
    Stratified(StratifiedPredictor),
}

impl FittedModel {
    pub fn feature_names(&self) -> &[String] {
        match self {
            Self::Linear(m) => &m.feature_names,
            Self::Ensemble(m) => &m.feature_names,
            Self::Stratified(m) => &m.model_a.feature_names,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Linear(m) => m.penalty.name(),
            Self::Ensemble(m) => m.kind.name(),
            Self::Stratified(_) => "stratified",
        }
    }
}

impl Regressor for FittedModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            Self::Linear(m) => m.predict_row(x),
            Self::Ensemble(m) => m.predict_row(x),
            Self::Stratified(m) => m.predict_row(x),
        }
    }

    fn n_features(&self) -> usize {
        self.feature_names().len()
    }
}

#[cfg(test)]
pub(crate) mod testdata {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// y = 1 + 2 x0 - x1 + 0.5 x2 + noise.
    pub fn linear(n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let y = x
            .iter()
            .map(|r| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::new(x, y, vec!["a".into(), "b".into(), "c".into()], (0..n).map(|i| i.to_string()).collect())
            .unwrap()
    }

    /// Drug-like rows follow one linear law, the rest another.
    pub fn two_populations(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let extreme = rng.gen_bool(0.3);
            let molwt = if extreme { rng.gen_range(450.0..800.0) } else { rng.gen_range(150.0..480.0) };
            let row = vec![
                molwt,
                rng.gen_range(0.0..140.0),
                rng.gen_range(0..4) as f64 + if extreme { 2.0 } else { 0.0 },
                rng.gen_range(0..9) as f64,
                rng.gen_range(0..12) as f64,
                rng.gen_range(0..4) as f64,
                rng.gen_range(0.0..1.0),
            ];
            let noise: f64 = rng.sample(StandardNormal);
            let v = if extreme {
                7.0 - 0.02 * row[1] + 0.4 * row[5] - 0.004 * (molwt - 600.0) + 0.6 * noise
            } else {
                0.008 * molwt - 0.025 * row[1] + 0.3 * row[5] - 0.2 * row[2] + 0.3 * noise
            };
            x.push(row);
            y.push(v);
        }
        Dataset::new(x, y, MODEL_FEATURES.iter().map(|s| s.to_string()).collect(), (0..n).map(|i| i.to_string()).collect())
            .unwrap()
    }
}
