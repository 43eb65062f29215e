use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linear::{fit_linear_lenient, fit_linear_transformed};
use super::{
    fit_forest, fit_gbm, metrics, Dataset, FittedModel, ForestParams, GbmParams, ModelError, Penalty, Regressor,
    SolverOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelFamily {
    Ridge,
    Lasso,
    ElasticNet,
    Forest,
    Gbm,
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "ridge" => Self::Ridge,
            "lasso" => Self::Lasso,
            "enet" | "elasticnet" => Self::ElasticNet,
            "rf" | "forest" => Self::Forest,
            "gbm" => Self::Gbm,
            other => return Err(format!("unknown model family {other:?}")),
        })
    }
}

/// One point of a hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelSpec {
    Linear { penalty: Penalty, yeo_johnson: bool },
    Forest(ForestParams),
    Gbm(GbmParams),
}

impl ModelSpec {
    pub fn fit(&self, train: &Dataset, seed: u64, workers: usize, solver: &SolverOptions) -> Result<FittedModel, ModelError> {
        Ok(match self {
            Self::Linear { penalty, yeo_johnson: false } => FittedModel::Linear(fit_linear_lenient(train, *penalty, solver)?),
            Self::Linear { penalty, yeo_johnson: true } => {
                FittedModel::Linear(fit_linear_transformed(train, *penalty, solver)?)
            }
            Self::Forest(p) => FittedModel::Ensemble(fit_forest(train, p, seed, workers)?),
            Self::Gbm(p) => FittedModel::Ensemble(fit_gbm(train, p, seed)?),
        })
    }

    /// Larger is more regularized.
    fn strength(&self) -> (f64, f64) {
        let depth = |d: Option<usize>| -(d.map_or(f64::INFINITY, |d| d as f64));
        match self {
            Self::Linear { penalty, .. } => (penalty.lambda(), 0.0),
            Self::Forest(p) => (depth(p.max_depth), p.min_samples_leaf as f64),
            Self::Gbm(p) => (depth(p.max_depth), -p.learning_rate),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let depth = |d: Option<usize>| d.map_or("none".to_string(), |d| d.to_string());
        match self {
            Self::Linear { penalty, yeo_johnson } => {
                write!(f, "{} lambda={}", penalty.name(), penalty.lambda())?;
                if let Penalty::ElasticNet { l1_ratio, .. } = penalty {
                    write!(f, " l1_ratio={l1_ratio}")?;
                }
                if *yeo_johnson {
                    write!(f, " yeo_johnson")?;
                }
                Ok(())
            }
            Self::Forest(p) => write!(
                f,
                "random_forest n_estimators={} max_depth={} min_samples_leaf={}",
                p.n_estimators,
                depth(p.max_depth),
                p.min_samples_leaf
            ),
            Self::Gbm(p) => write!(
                f,
                "gradient_boosting n_estimators={} max_depth={} learning_rate={} subsample={}",
                p.n_estimators,
                depth(p.max_depth),
                p.learning_rate,
                p.subsample
            ),
        }
    }
}

pub const DEFAULT_LAMBDAS: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

pub fn default_grid(family: ModelFamily) -> Vec<ModelSpec> {
    let linear = |make: fn(f64) -> Penalty| {
        DEFAULT_LAMBDAS.iter().map(|&l| ModelSpec::Linear { penalty: make(l), yeo_johnson: false }).collect()
    };
    match family {
        ModelFamily::Ridge => linear(|lambda| Penalty::Ridge { lambda }),
        ModelFamily::Lasso => linear(|lambda| Penalty::Lasso { lambda }),
        ModelFamily::ElasticNet => linear(|lambda| Penalty::ElasticNet { lambda, l1_ratio: 0.5 }),
        ModelFamily::Forest => [(Some(20), 5), (Some(30), 2), (Some(30), 5), (Some(30), 10), (None, 5)]
            .into_iter()
            .map(|(max_depth, min_samples_leaf)| {
                ModelSpec::Forest(ForestParams { max_depth, min_samples_leaf, ..Default::default() })
            })
            .collect(),
        ModelFamily::Gbm => [(Some(6), 0.1), (Some(10), 0.05), (Some(10), 0.1), (Some(14), 0.1)]
            .into_iter()
            .map(|(max_depth, learning_rate)| ModelSpec::Gbm(GbmParams { max_depth, learning_rate, ..Default::default() }))
            .collect(),
    }
}

/// Fold index of every row: a seeded shuffle cut into `folds` contiguous runs.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos * folds / n;
    }
    fold
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub best: ModelSpec,
    /// Mean validation R² per grid point, in grid order.
    pub scores: Vec<(ModelSpec, f64)>,
}

/// K-fold grid search by mean validation R². Near-ties (within 1e-12) go to
/// the more strongly regularized point.
pub fn cross_validate(
    train: &Dataset,
    grid: &[ModelSpec],
    folds: usize,
    seed: u64,
    workers: usize,
    solver: &SolverOptions,
) -> Result<CvResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    if folds < 2 || folds > train.n() {
        return Err(ModelError::InvalidParameter(format!("{folds} folds for {} rows", train.n())));
    }
    let assignment = fold_assignment(train.n(), folds, seed);
    let parts: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|k| {
            let (val, fit): (Vec<usize>, Vec<usize>) = (0..train.n()).partition(|&i| assignment[i] == k);
            (train.subset(&fit), train.subset(&val))
        })
        .collect();
    let mut scores = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut total = 0.0;
        for (k, (fit, val)) in parts.iter().enumerate() {
            let model = spec.fit(fit, seed.wrapping_add(k as u64), workers, solver)?;
            total += metrics(&model.predict(&val.x), &val.y).r2.unwrap_or(f64::NEG_INFINITY);
        }
        scores.push((*spec, total / folds as f64));
    }
    let mut best = 0;
    for (i, (spec, score)) in scores.iter().enumerate().skip(1) {
        let (bspec, bscore) = &scores[best];
        let tie = (score - bscore).abs() <= 1e-12;
        if (!tie && score > bscore) || (tie && spec.strength() > bspec.strength()) {
            best = i;
        }
    }
    Ok(CvResult { best: scores[best].0, scores })
}
