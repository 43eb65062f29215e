use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, Dataset, ModelError, Regressor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

/// CART regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Growth limits for a single tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per node; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means ⌈p/3⌉.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_estimators: 200, max_depth: Some(30), min_samples_leaf: 5, max_features: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbmParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self { n_estimators: 300, max_depth: Some(10), learning_rate: 0.1, min_samples_leaf: 1, subsample: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    RandomForest,
    GradientBoosting,
}

impl EnsembleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomForest => "random_forest",
            Self::GradientBoosting => "gradient_boosting",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "random_forest" => Some(Self::RandomForest),
            "gradient_boosting" => Some(Self::GradientBoosting),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// GBM initial prediction (0 for forests).
    pub init: f64,
    /// GBM shrinkage (1 for forests).
    pub learning_rate: f64,
    pub tree_params: TreeParams,
    pub subsample: f64,
    pub seed: u64,
}

impl TreeEnsemble {
    /// GBM prediction using only the first `k` trees.
    pub fn predict_staged(&self, x: &[f64], k: usize) -> f64 {
        match self.kind {
            EnsembleKind::RandomForest => {
                let k = k.min(self.trees.len()).max(1);
                self.trees[..k].iter().map(|t| t.predict_row(x)).sum::<f64>() / k as f64
            }
            EnsembleKind::GradientBoosting => {
                self.init + self.learning_rate * self.trees[..k.min(self.trees.len())].iter().map(|t| t.predict_row(x)).sum::<f64>()
            }
        }
    }
}

impl Regressor for TreeEnsemble {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_staged(x, self.trees.len())
    }

    fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: TreeParams,
    n_candidates: usize,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

struct BestSplit {
    sse: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n;
        self.nodes.push(Node::Leaf { value: mean });

        let min_leaf = self.params.min_samples_leaf.max(1);
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if pure || idx.len() < 2 * min_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let parent_sse: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();

        let p = self.x[0].len();
        let mut best: Option<BestSplit> = None;
        if self.n_candidates < p {
            let mut chosen: Vec<usize> = sample(rng, p, self.n_candidates).into_vec();
            chosen.sort_unstable();
            for &f in &chosen {
                self.consider(idx, f, mean, min_leaf, &mut best);
            }
            if best.is_none() {
                // every sampled feature was constant here; fall back to the rest
                for f in (0..p).filter(|f| !chosen.contains(f)) {
                    self.consider(idx, f, mean, min_leaf, &mut best);
                }
            }
        } else {
            for f in 0..p {
                self.consider(idx, f, mean, min_leaf, &mut best);
            }
        }
        let Some(best) = best.filter(|b| b.sse < parent_sse) else {
            return id;
        };

        let x = self.x;
        idx.sort_by(|&a, &b| x[a][best.feature].total_cmp(&x[b][best.feature]));
        let cut = idx.partition_point(|&i| x[i][best.feature] <= best.threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id as usize] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    /// Scans every admissible threshold of feature `f`; keeps the split only
    /// if it strictly improves on `best` (earlier features and smaller
    /// thresholds win ties).
    fn consider(&mut self, idx: &[usize], f: usize, mean: f64, min_leaf: usize, best: &mut Option<BestSplit>) {
        let x = self.x;
        self.order.clear();
        self.order.extend_from_slice(idx);
        self.order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let m = self.order.len();
        let (total, total_sq) = self.order.iter().fold((0.0, 0.0), |(s, q), &i| {
            let d = self.y[i] - mean;
            (s + d, q + d * d)
        });
        let (mut s, mut q) = (0.0, 0.0);
        for pos in 1..m {
            let d = self.y[self.order[pos - 1]] - mean;
            s += d;
            q += d * d;
            if pos < min_leaf || m - pos < min_leaf {
                continue;
            }
            let (a, b) = (x[self.order[pos - 1]][f], x[self.order[pos]][f]);
            if a >= b {
                continue;
            }
            let (nl, nr) = (pos as f64, (m - pos) as f64);
            let sse = (q - s * s / nl) + ((total_sq - q) - (total - s).powi(2) / nr);
            if best.as_ref().map_or(true, |bs| sse < bs.sse) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid >= a && mid < b { mid } else { a };
                *best = Some(BestSplit { sse, feature: f, threshold });
            }
        }
    }
}

fn build_tree(x: &[Vec<f64>], y: &[f64], idx: &mut [usize], params: TreeParams, rng: &mut ChaCha8Rng) -> Tree {
    let p = x.first().map_or(0, Vec::len);
    let mut b = Builder {
        x,
        y,
        params,
        n_candidates: params.max_features.unwrap_or(p).clamp(1, p.max(1)),
        nodes: Vec::new(),
        order: Vec::with_capacity(idx.len()),
    };
    b.grow(idx, 0, rng);
    Tree { nodes: b.nodes }
}

fn check_rows(train: &Dataset) -> Result<(), ModelError> {
    if train.n() == 0 || train.p() == 0 {
        return Err(ModelError::Data("empty training set".into()));
    }
    Ok(())
}

/// Single CART tree on all rows.
pub fn fit_tree(train: &Dataset, params: TreeParams, seed: u64) -> Result<Tree, ModelError> {
    check_rows(train)?;
    let mut idx: Vec<usize> = (0..train.n()).collect();
    Ok(build_tree(&train.x, &train.y, &mut idx, params, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ModelError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ModelError::InvalidParameter(format!("thread pool: {e}")))
}

/// Bootstrap-aggregated CART trees with per-node feature subsampling. Trees
/// are grown in parallel; each has its own seed, so the result does not
/// depend on `workers`.
pub fn fit_forest(train: &Dataset, params: &ForestParams, seed: u64, workers: usize) -> Result<TreeEnsemble, ModelError> {
    check_rows(train)?;
    if params.n_estimators == 0 {
        return Err(ModelError::InvalidParameter("n_estimators must be positive".into()));
    }
    let p = train.p();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: Some(params.max_features.unwrap_or(p.div_ceil(3))),
    };
    let n = train.n();
    let grow = |t: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        build_tree(&train.x, &train.y, &mut idx, tree_params, &mut rng)
    };
    let trees = pool(workers)?.install(|| (0..params.n_estimators).into_par_iter().map(grow).collect());
    Ok(TreeEnsemble {
        kind: EnsembleKind::RandomForest,
        feature_names: train.feature_names.clone(),
        trees,
        init: 0.0,
        learning_rate: 1.0,
        tree_params,
        subsample: 1.0,
        seed,
    })
}

/// Gradient boosting with squared loss.
pub fn fit_gbm(train: &Dataset, params: &GbmParams, seed: u64) -> Result<TreeEnsemble, ModelError> {
    check_rows(train)?;
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(ModelError::InvalidParameter(format!("learning rate {}", params.learning_rate)));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(ModelError::InvalidParameter(format!("subsample {}", params.subsample)));
    }
    let n = train.n();
    let tree_params =
        TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, max_features: None };
    let init = train.y.iter().sum::<f64>() / n as f64;
    let mut current = vec![init; n];
    let mut residual = vec![0.0; n];
    let m = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.n_estimators);
    for t in 0..params.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        for i in 0..n {
            residual[i] = train.y[i] - current[i];
        }
        let mut idx: Vec<usize> = if m < n {
            let mut s = sample(&mut rng, n, m).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let tree = build_tree(&train.x, &residual, &mut idx, tree_params, &mut rng);
        for i in 0..n {
            current[i] += params.learning_rate * tree.predict_row(&train.x[i]);
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        kind: EnsembleKind::GradientBoosting,
        feature_names: train.feature_names.clone(),
        trees,
        init,
        learning_rate: params.learning_rate,
        tree_params,
        subsample: params.subsample,
        seed,
    })
}
