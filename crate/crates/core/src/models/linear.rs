use crate::linalg::{dot, ols_with_intercept, solve, Matrix};

use super::{yeo_johnson_fit, Dataset, ModelError, Regressor, Scaler, YeoJohnson};

/// Penalty on the standardized coefficients. The fitted objective is
/// `(1/2n)·RSS + λ·(α‖β‖₁ + (1−α)/2·‖β‖²)`, with α = 0 for ridge and 1 for lasso.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    ElasticNet { lambda: f64, l1_ratio: f64 },
}

impl Penalty {
    pub fn lambda(&self) -> f64 {
        match *self {
            Self::Ridge { lambda } | Self::Lasso { lambda } | Self::ElasticNet { lambda, .. } => lambda,
        }
    }

    pub fn l1_ratio(&self) -> f64 {
        match *self {
            Self::Ridge { .. } => 0.0,
            Self::Lasso { .. } => 1.0,
            Self::ElasticNet { l1_ratio, .. } => l1_ratio,
        }
    }

    /// (λ₁, λ₂): weights of the L1 term and the L2 term.
    pub fn split(&self) -> (f64, f64) {
        let (l, a) = (self.lambda(), self.l1_ratio());
        (l * a, l * (1.0 - a))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ridge { .. } => "ridge",
            Self::Lasso { .. } => "lasso",
            Self::ElasticNet { .. } => "elasticnet",
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        match *self {
            Self::Ridge { .. } => Self::Ridge { lambda },
            Self::Lasso { .. } => Self::Lasso { lambda },
            Self::ElasticNet { l1_ratio, .. } => Self::ElasticNet { lambda, l1_ratio },
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let (l, a) = (self.lambda(), self.l1_ratio());
        if !(l >= 0.0 && l.is_finite()) || !(0.0..=1.0).contains(&a) {
            return Err(ModelError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-7, max_iters: 10_000 }
    }
}

/// log(r² + ε) ≈ intercept + slope·ŷ
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceModel {
    pub intercept: f64,
    pub slope: f64,
}

pub const WLS_EPSILON: f64 = 1e-8;

impl VarianceModel {
    pub fn weight(&self, fitted: f64) -> f64 {
        1.0 / (self.intercept + self.slope * fitted).exp().max(WLS_EPSILON)
    }
}

/// Linear model on standardized features. The intercept lives in the
/// standardized space, so `predict = intercept + β·scale(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub penalty: Penalty,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub scaler: Scaler,
    pub transform: Option<YeoJohnson>,
    pub variance_model: Option<VarianceModel>,
}

impl LinearModel {
    /// Prediction before any inverse target transform.
    pub fn predict_linear(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, &self.scaler.transform_row(x))
    }

    /// Coefficients and intercept on the original feature scale.
    pub fn unscaled(&self) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = self.coefficients.iter().zip(&self.scaler.std).map(|(b, s)| b / s).collect();
        (self.intercept - dot(&slopes, &self.scaler.mean), slopes)
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }
}

impl Regressor for LinearModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let z = self.predict_linear(x);
        self.transform.map_or(z, |t| t.invert(z))
    }

    fn n_features(&self) -> usize {
        self.coefficients.len()
    }
}

struct Standardized {
    scaler: Scaler,
    y_mean: f64,
    /// ZᵀZ / n
    gram: Matrix,
    /// Zᵀ(y − ȳ) / n
    xty: Vec<f64>,
}

fn standardize(train: &Dataset) -> Result<Standardized, ModelError> {
    let scaler = Scaler::fit(train)?;
    let z = scaler.transform(&train.x);
    let n = train.n() as f64;
    let p = train.p();
    let y_mean = train.y.iter().sum::<f64>() / n;
    let mut gram = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for (row, y) in z.iter().zip(&train.y) {
        for a in 0..p {
            xty[a] += row[a] * (y - y_mean);
            for b in a..p {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        xty[a] /= n;
        for b in a..p {
            gram[(a, b)] /= n;
            gram[(b, a)] = gram[(a, b)];
        }
    }
    Ok(Standardized { scaler, y_mean, gram, xty })
}

/// Smallest λ at which the (elastic-net) solution is identically zero.
pub fn lambda_max(train: &Dataset, l1_ratio: f64) -> Result<f64, ModelError> {
    let s = standardize(train)?;
    let m = s.xty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(m / l1_ratio.max(f64::MIN_POSITIVE))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn fit_linear(train: &Dataset, penalty: Penalty, opts: &SolverOptions) -> Result<LinearModel, ModelError> {
    penalty.validate()?;
    let s = standardize(train)?;
    let p = train.p();
    let mut model = LinearModel {
        feature_names: train.feature_names.clone(),
        penalty,
        coefficients: vec![0.0; p],
        intercept: s.y_mean,
        scaler: s.scaler,
        transform: None,
        variance_model: None,
    };
    if let Penalty::Ridge { lambda } = penalty {
        let mut a = s.gram.clone();
        (0..p).for_each(|j| a[(j, j)] += lambda);
        model.coefficients = solve(&a, &s.xty).ok_or(ModelError::Singular)?;
        return Ok(model);
    }

    // covariance-form cyclic coordinate descent
    let (l1, l2) = penalty.split();
    let beta = &mut model.coefficients;
    let mut max_change = f64::INFINITY;
    for _sweep in 0..opts.max_iters {
        max_change = 0.0f64;
        for j in 0..p {
            let g = s.gram[(j, j)];
            let rho = s.xty[j] - dot(s.gram.row(j), beta) + g * beta[j];
            let new = soft_threshold(rho, l1) / (g + l2);
            max_change = max_change.max((new - beta[j]).abs());
            beta[j] = new;
        }
        if max_change < opts.tolerance {
            return Ok(model);
        }
    }
    Err(ModelError::NotConverged { iterations: opts.max_iters, max_change, last: Box::new(model) })
}

/// Like [`fit_linear`], but returns the last iterate (with a warning) when the
/// solver runs out of sweeps.
pub fn fit_linear_lenient(train: &Dataset, penalty: Penalty, opts: &SolverOptions) -> Result<LinearModel, ModelError> {
    match fit_linear(train, penalty, opts) {
        Err(ModelError::NotConverged { iterations, max_change, last }) => {
            log::warn!("{} did not converge in {iterations} sweeps (max change {max_change:e})", penalty.name());
            Ok(*last)
        }
        other => other,
    }
}

/// Fits on the Yeo-Johnson transformed target; predictions are mapped back.
pub fn fit_linear_transformed(
    train: &Dataset,
    penalty: Penalty,
    opts: &SolverOptions,
) -> Result<LinearModel, ModelError> {
    let t = yeo_johnson_fit(&train.y);
    let mut model = fit_linear_lenient(&train.with_target(t.apply_all(&train.y)), penalty, opts)?;
    model.transform = Some(t);
    Ok(model)
}

/// Ridge solving the weighted normal equations. The scaler is fit without
/// weights; weights are normalized internally, so only their ratios matter.
pub fn fit_weighted_ridge(train: &Dataset, weights: &[f64], lambda: f64) -> Result<LinearModel, ModelError> {
    if weights.len() != train.n() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(ModelError::InvalidParameter("weights must be positive and one per row".into()));
    }
    Penalty::Ridge { lambda }.validate()?;
    let scaler = Scaler::fit(train)?;
    let z = scaler.transform(&train.x);
    let p = train.p();
    let wsum: f64 = weights.iter().sum();
    let zbar: Vec<f64> = (0..p).map(|j| z.iter().zip(weights).map(|(r, w)| w * r[j]).sum::<f64>() / wsum).collect();
    let ybar = train.y.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / wsum;
    let mut a = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for ((row, y), w) in z.iter().zip(&train.y).zip(weights) {
        for j in 0..p {
            let cj = w * (row[j] - zbar[j]);
            rhs[j] += cj * (y - ybar);
            for k in j..p {
                a[(j, k)] += cj * (row[k] - zbar[k]);
            }
        }
    }
    for j in 0..p {
        rhs[j] /= wsum;
        for k in j..p {
            a[(j, k)] /= wsum;
            a[(k, j)] = a[(j, k)];
        }
        a[(j, j)] += lambda;
    }
    let coefficients = solve(&a, &rhs).ok_or(ModelError::Singular)?;
    let intercept = ybar - dot(&coefficients, &zbar);
    Ok(LinearModel {
        feature_names: train.feature_names.clone(),
        penalty: Penalty::Ridge { lambda },
        coefficients,
        intercept,
        scaler,
        transform: None,
        variance_model: None,
    })
}

/// Feasible weighted least squares: models log squared residuals of `base`
/// as a linear function of its fitted values, then refits a weighted ridge.
pub fn fit_wls(train: &Dataset, base: &LinearModel) -> Result<LinearModel, ModelError> {
    if base.transform.is_some() {
        return Err(ModelError::InvalidParameter("WLS base model must predict on the raw target".into()));
    }
    let lambda = base.penalty.lambda();
    let fitted = base.predict(&train.x);
    let log_r2: Vec<f64> =
        fitted.iter().zip(&train.y).map(|(f, y)| ((y - f).powi(2) + WLS_EPSILON).ln()).collect();
    let (lo, hi) = fitted.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    let spread_ok = hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let variance = spread_ok
        .then(|| ols_with_intercept(&[fitted.clone()], &log_r2))
        .flatten()
        .map(|(intercept, slope)| VarianceModel { intercept, slope: slope[0] })
        .filter(|v| v.intercept.is_finite() && v.slope.is_finite());
    let Some(variance) = variance else {
        log::warn!("degenerate variance model; falling back to unweighted fit");
        return fit_weighted_ridge(train, &vec![1.0; train.n()], lambda);
    };
    let mut weights: Vec<f64> = fitted.iter().map(|&f| variance.weight(f)).collect();
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if !mean.is_finite() || !(mean > 0.0) {
        log::warn!("variance model produced unusable weights; falling back to unweighted fit");
        return fit_weighted_ridge(train, &vec![1.0; train.n()], lambda);
    }
    weights.iter_mut().for_each(|w| *w /= mean);
    let mut model = fit_weighted_ridge(train, &weights, lambda)?;
    model.variance_model = Some(variance);
    Ok(model)
}

/// Observation weights implied by a WLS model on `rows` (mean-normalized).
pub fn wls_weights(model: &LinearModel, base: &LinearModel, rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let v = model.variance_model?;
    let w: Vec<f64> = base.predict(rows).iter().map(|&f| v.weight(f)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Some(w.into_iter().map(|x| x / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::super::testdata;
    use super::*;
    use crate::linalg::weighted_ols;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    fn ridge(d: &Dataset, lambda: f64) -> LinearModel {
        fit_linear(d, Penalty::Ridge { lambda }, &opts()).unwrap()
    }

    #[test]
    fn ridge_at_zero_is_ols() {
        let d = testdata::linear(400, 0.5, 2);
        let m = ridge(&d, 0.0);
        let (b0, b) = ols_with_intercept(&d.columns(), &d.y).unwrap();
        let (i, s) = m.unscaled();
        assert!((i - b0).abs() < 1e-8);
        for (x, y) in s.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_matches_augmented_least_squares() {
        // ridge on standardized data == OLS on rows augmented with √(nλ)·I
        let d = testdata::linear(200, 1.0, 4);
        let lambda = 0.3;
        let m = ridge(&d, lambda);
        let n = d.n() as f64;
        let z = m.scaler.transform(&d.x);
        let ybar = d.y.iter().sum::<f64>() / n;
        let mut cols: Vec<Vec<f64>> = (0..3).map(|j| z.iter().map(|r| r[j]).collect()).collect();
        let mut y: Vec<f64> = d.y.iter().map(|v| v - ybar).collect();
        for j in 0..3 {
            for (k, c) in cols.iter_mut().enumerate() {
                c.push(if k == j { (n * lambda).sqrt() } else { 0.0 });
            }
            y.push(0.0);
        }
        let gram: Vec<Vec<f64>> = (0..3).map(|a| (0..3).map(|b| dot(&cols[a], &cols[b])).collect()).collect();
        let rhs: Vec<f64> = (0..3).map(|a| dot(&cols[a], &y)).collect();
        let beta = solve(&Matrix::from_rows(&gram), &rhs).unwrap();
        for (a, b) in m.coefficients.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((m.intercept - ybar).abs() < 1e-12);
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda() {
        let d = testdata::linear(300, 1.0, 6);
        let norms: Vec<f64> = [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&l| ridge(&d, l).coefficients.iter().map(|b| b * b).sum::<f64>().sqrt())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
    }

    #[test]
    fn lasso_zero_above_lambda_max() {
        let d = testdata::linear(300, 1.0, 7);
        let lmax = lambda_max(&d, 1.0).unwrap();
        let m = fit_linear(&d, Penalty::Lasso { lambda: lmax }, &opts()).unwrap();
        assert!(m.coefficients.iter().all(|b| *b == 0.0));
        let m = fit_linear(&d, Penalty::Lasso { lambda: lmax * 0.99 }, &opts()).unwrap();
        assert_eq!(m.nonzero(), 1);
        assert!(fit_linear(&d, Penalty::Lasso { lambda: lmax * 5.0 }, &opts())
            .unwrap()
            .coefficients
            .iter()
            .all(|b| *b == 0.0));
    }

    /// Subgradient of (1/2n)RSS on the standardized design.
    fn gradient(m: &LinearModel, d: &Dataset) -> Vec<f64> {
        let z = m.scaler.transform(&d.x);
        let n = d.n() as f64;
        (0..d.p())
            .map(|j| {
                -z.iter().zip(&d.y).map(|(r, y)| r[j] * (y - m.intercept - dot(&m.coefficients, r))).sum::<f64>()
                    / n
            })
            .collect()
    }

    #[test]
    fn lasso_satisfies_kkt() {
        let mut d = testdata::linear(500, 1.0, 9);
        // add a pure-noise feature so some coefficients are inactive
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        d.x.iter_mut().for_each(|r| r.push(rng.sample(StandardNormal)));
        d.feature_names.push("noise".into());
        for lambda in [0.01, 0.1, 0.5, 1.0] {
            let m = fit_linear(&d, Penalty::Lasso { lambda }, &SolverOptions { tolerance: 1e-12, max_iters: 100_000 })
                .unwrap();
            for (g, b) in gradient(&m, &d).iter().zip(&m.coefficients) {
                if *b != 0.0 {
                    assert!((g.abs() - lambda).abs() < 1e-8, "active {g} vs {lambda}");
                    assert!(g.signum() == -b.signum());
                } else {
                    assert!(g.abs() <= lambda + 1e-8);
                }
            }
        }
    }

    #[test]
    fn elastic_net_reduces_to_endpoints() {
        let d = testdata::linear(300, 1.0, 10);
        let tight = SolverOptions { tolerance: 1e-12, max_iters: 100_000 };
        let r = ridge(&d, 0.2);
        let e0 = fit_linear(&d, Penalty::ElasticNet { lambda: 0.2, l1_ratio: 0.0 }, &tight).unwrap();
        let l = fit_linear(&d, Penalty::Lasso { lambda: 0.2 }, &tight).unwrap();
        let e1 = fit_linear(&d, Penalty::ElasticNet { lambda: 0.2, l1_ratio: 1.0 }, &tight).unwrap();
        for j in 0..3 {
            assert!((r.coefficients[j] - e0.coefficients[j]).abs() < 1e-6);
            assert!((l.coefficients[j] - e1.coefficients[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let d = testdata::linear(100, 1.0, 11);
        let err = fit_linear(&d, Penalty::Lasso { lambda: 1e-3 }, &SolverOptions { tolerance: 0.0, max_iters: 3 })
            .unwrap_err();
        match err {
            ModelError::NotConverged { iterations, last, .. } => {
                assert_eq!(iterations, 3);
                assert!(last.nonzero() > 0);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn transformed_model_predicts_on_raw_scale() {
        let d = testdata::linear(300, 0.1, 12);
        let d = d.with_target(d.y.iter().map(|v| v.exp() / 10.0).collect());
        let m = fit_linear_transformed(&d, Penalty::Ridge { lambda: 1e-4 }, &opts()).unwrap();
        let t = m.transform.unwrap();
        let row = &d.x[0];
        assert!((m.predict_row(row) - t.invert(m.predict_linear(row))).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let d = testdata::linear(300, 1.0, 13);
        let m = ridge(&d, 0.05);
        let w = fit_weighted_ridge(&d, &vec![3.7; d.n()], 0.05).unwrap();
        for (a, b) in m.coefficients.iter().zip(&w.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((m.intercept - w.intercept).abs() < 1e-10);
    }

    #[test]
    fn weighted_ridge_at_zero_is_weighted_ols() {
        let d = testdata::linear(200, 1.0, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..200).map(|_| rng.gen_range(0.1..3.0)).collect();
        let m = fit_weighted_ridge(&d, &w, 0.0).unwrap();
        let (b0, b) = weighted_ols(&d.columns(), &d.y, Some(&w)).unwrap();
        let (i, s) = m.unscaled();
        assert!((i - b0).abs() < 1e-9);
        s.iter().zip(&b).for_each(|(x, y)| assert!((x - y).abs() < 1e-9));
    }

    fn hetero(n: usize, seed: u64, power: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = testdata::linear(n, 0.0, seed);
        let y = base
            .y
            .iter()
            .map(|&mu| mu + 0.3 * mu.abs().max(0.05).powf(power) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        base.with_target(y)
    }

    #[test]
    fn homoskedastic_weights_are_flat() {
        let d = hetero(200_000, 15, 0.0);
        let base = ridge(&d, 1e-4);
        let wls = fit_wls(&d, &base).unwrap();
        let w = wls_weights(&wls, &base, &d.x).unwrap();
        let (lo, hi) = w.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo < 1.1, "{lo} {hi}");
    }

    #[test]
    fn weights_decrease_with_variance() {
        // spread grows with |ŷ|; the fitted intercept is 1, so ŷ is mostly positive
        let d = hetero(5000, 16, 1.0);
        let base = ridge(&d, 1e-4);
        let wls = fit_wls(&d, &base).unwrap();
        let w = wls_weights(&wls, &base, &d.x).unwrap();
        let f = base.predict(&d.x);
        let abs_f: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        let rho = crate::stats::spearman(&abs_f, &w).unwrap();
        assert!(rho < 0.0, "{rho}");
        assert!(wls.variance_model.unwrap().slope > 0.0);
    }

    #[test]
    fn constant_fitted_values_fall_back() {
        let d = testdata::linear(100, 1.0, 17);
        let mut base = ridge(&d, 0.1);
        base.coefficients.iter_mut().for_each(|b| *b = 0.0);
        let m = fit_wls(&d, &base).unwrap();
        assert!(m.variance_model.is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ridge_norm_monotone(seed in 0u64..1000, a in -4.0f64..2.0, b in -4.0f64..2.0) {
            let d = testdata::linear(60, 2.0, seed);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let n_lo: f64 = ridge(&d, 10f64.powf(lo)).coefficients.iter().map(|x| x * x).sum();
            let n_hi: f64 = ridge(&d, 10f64.powf(hi)).coefficients.iter().map(|x| x * x).sum();
            prop_assert!(n_hi <= n_lo * (1.0 + 1e-12) + 1e-15);
        }
    }
}
