//! Descriptive statistics and regression diagnostics.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::linalg::{self, mean, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("columns have unequal lengths")]
    Ragged,
    #[error("need at least {need} columns, got {got}")]
    TooFewColumns { need: usize, got: usize },
    #[error("column {0} has zero variance")]
    ZeroVariance(usize),
    #[error("requested {k} components from {p} features")]
    TooManyComponents { k: usize, p: usize },
    #[error("auxiliary regression design is singular")]
    DegenerateDesign,
}

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

/// Two-sided p-value of a Student t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Population central moments m2, m3, m4.
fn central_moments(v: &[f64]) -> (f64, f64, f64) {
    let m = mean(v);
    let n = v.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in v {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// m3 / m2^1.5; zero for a constant column.
    pub skewness: f64,
    /// m4 / m2^2 - 3; zero for a constant column.
    pub excess_kurtosis: f64,
}

pub fn summarize(column: &[f64]) -> Result<ColumnSummary, StatsError> {
    if column.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: column.len() });
    }
    let sorted = sorted_copy(column);
    let n = column.len();
    let m = mean(column);
    let (m2, m3, m4) = central_moments(column);
    let ss: f64 = column.iter().map(|x| (x - m).powi(2)).sum();
    let (q1, q3) = (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75));
    Ok(ColumnSummary {
        n,
        mean: m,
        median: quantile_sorted(&sorted, 0.5),
        std_dev: (ss / (n - 1) as f64).sqrt(),
        min: sorted[0],
        max: sorted[n - 1],
        q1,
        q3,
        iqr: q3 - q1,
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
        excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
    })
}

/// Pearson correlations with two-sided p-values. Entries involving a
/// zero-variance column are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub r: Vec<Vec<Option<f64>>>,
    pub p_values: Vec<Vec<Option<f64>>>,
}

fn check_columns(columns: &[Vec<f64>], min_rows: usize) -> Result<usize, StatsError> {
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(StatsError::Ragged);
    }
    if n < min_rows {
        return Err(StatsError::TooFew { need: min_rows, got: n });
    }
    Ok(n)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| r[k] = avg);
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

pub fn pearson_matrix(columns: &[Vec<f64>]) -> Result<CorrelationMatrix, StatsError> {
    let n = check_columns(columns, 2)?;
    let k = columns.len();
    let df = n as f64 - 2.0;
    let mut r = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let rij = if i == j {
                pearson(&columns[i], &columns[i]).map(|_| 1.0)
            } else {
                pearson(&columns[i], &columns[j])
            };
            let pij = rij.map(|rv| {
                if df <= 0.0 {
                    f64::NAN
                } else if rv.abs() >= 1.0 {
                    0.0
                } else {
                    t_two_sided(rv * (df / (1.0 - rv * rv)).sqrt(), df)
                }
            });
            r[i][j] = rij;
            r[j][i] = rij;
            p[i][j] = pij;
            p[j][i] = pij;
        }
    }
    Ok(CorrelationMatrix { r, p_values: p })
}

/// Coefficient of determination of an OLS fit (with intercept); `None`
/// when the response is constant.
fn r_squared(columns: &[Vec<f64>], y: &[f64]) -> Result<Option<f64>, StatsError> {
    let (b0, b) = linalg::ols_with_intercept(columns, y).ok_or(StatsError::DegenerateDesign)?;
    let my = mean(y);
    let (mut sse, mut sst) = (0.0, 0.0);
    for i in 0..y.len() {
        let fit = b0 + columns.iter().zip(&b).map(|(c, bj)| c[i] * bj).sum::<f64>();
        sse += (y[i] - fit).powi(2);
        sst += (y[i] - my).powi(2);
    }
    Ok((sst > 0.0).then(|| 1.0 - sse / sst))
}

/// VIF_j = 1 / (1 - R_j^2); exact linear dependence gives infinity.
pub fn vif(features: &[Vec<f64>]) -> Result<Vec<f64>, StatsError> {
    if features.len() < 2 {
        return Err(StatsError::TooFewColumns { need: 2, got: features.len() });
    }
    check_columns(features, features.len() + 1)?;
    (0..features.len())
        .map(|j| {
            let others: Vec<Vec<f64>> =
                features.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, c)| c.clone()).collect();
            match r_squared(&others, &features[j]) {
                Err(StatsError::DegenerateDesign) => Ok(f64::INFINITY),
                Err(e) => Err(e),
                Ok(None) => Err(StatsError::ZeroVariance(j)),
                Ok(Some(r2)) if r2 >= 1.0 - 1e-12 => Ok(f64::INFINITY),
                Ok(Some(r2)) => Ok(1.0 / (1.0 - r2)),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierReport {
    pub indices: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

/// Values strictly outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
pub fn iqr_outliers(column: &[f64]) -> Result<OutlierReport, StatsError> {
    if column.len() < 4 {
        return Err(StatsError::TooFew { need: 4, got: column.len() });
    }
    let sorted = sorted_copy(column);
    let (q1, q3) = (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75));
    let iqr = q3 - q1;
    let (lower, upper) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let indices = column
        .iter()
        .enumerate()
        .filter(|(_, &x)| x < lower || x > upper)
        .map(|(i, _)| i)
        .collect();
    Ok(OutlierReport { indices, lower, upper })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalityResult {
    pub statistic: f64,
    pub p_value: f64,
    pub z_skew: f64,
    pub z_kurtosis: f64,
    pub n: usize,
}

/// D'Agostino-Pearson K^2 omnibus test on a seeded subsample of
/// `min(n, subsample)` values.
pub fn normality_test(column: &[f64], subsample: usize, seed: u64) -> Result<NormalityResult, StatsError> {
    if subsample < 20 || column.len() < 20 {
        return Err(StatsError::TooFew { need: 20, got: column.len().min(subsample) });
    }
    let data: Vec<f64> = if column.len() > subsample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, column.len(), subsample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| column[i]).collect()
    } else {
        column.to_vec()
    };
    let n = data.len() as f64;
    let (m2, m3, m4) = central_moments(&data);
    if m2 <= 0.0 {
        return Err(StatsError::ZeroVariance(0));
    }
    let b1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);

    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let ya = y / alpha;
    let z_skew = delta * (ya + (ya * ya + 1.0).sqrt()).ln();

    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term = (1.0 - 2.0 / a) / (1.0 + x * (2.0 / (a - 4.0)).sqrt());
    let z_kurtosis = ((1.0 - 2.0 / (9.0 * a)) - term.cbrt()) / (2.0 / (9.0 * a)).sqrt();

    let statistic = z_skew * z_skew + z_kurtosis * z_kurtosis;
    Ok(NormalityResult {
        statistic,
        p_value: chi2_sf(statistic, 2.0),
        z_skew,
        z_kurtosis,
        n: data.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BreuschPaganResult {
    pub lm_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Regresses squared residuals on the regressors (plus intercept);
/// LM = n R^2 against chi-squared with one degree of freedom per regressor.
pub fn breusch_pagan(residuals: &[f64], regressors: &[Vec<f64>]) -> Result<BreuschPaganResult, StatsError> {
    let k = regressors.len();
    if regressors.iter().any(|c| c.len() != residuals.len()) {
        return Err(StatsError::Ragged);
    }
    let n = residuals.len();
    if n <= k + 1 {
        return Err(StatsError::TooFew { need: k + 2, got: n });
    }
    let sq: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let r2 = r_squared(regressors, &sq)?.unwrap_or(0.0).max(0.0);
    let lm = n as f64 * r2;
    Ok(BreuschPaganResult { lm_statistic: lm, degrees_of_freedom: k, p_value: chi2_sf(lm, k as f64) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// One unit vector per component, length p.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// n rows by k components.
    pub projected: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

/// PCA on standardized columns (eigenvectors of the correlation matrix).
/// Each loading vector is signed so its largest-magnitude element is positive.
pub fn pca(features: &[Vec<f64>], k: usize) -> Result<PcaResult, StatsError> {
    let p = features.len();
    if k > p {
        return Err(StatsError::TooManyComponents { k, p });
    }
    let n = check_columns(features, 2)?;
    let means: Vec<f64> = features.iter().map(|c| mean(c)).collect();
    let std_devs: Vec<f64> = features
        .iter()
        .zip(&means)
        .map(|(c, m)| (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
        .collect();
    if let Some(j) = std_devs.iter().position(|&s| s <= 0.0) {
        return Err(StatsError::ZeroVariance(j));
    }
    let z: Vec<Vec<f64>> = features
        .iter()
        .enumerate()
        .map(|(j, c)| c.iter().map(|x| (x - means[j]) / std_devs[j]).collect())
        .collect();
    let mut corr = Matrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v = linalg::dot(&z[a], &z[b]) / (n - 1) as f64;
            corr[(a, b)] = v;
            corr[(b, a)] = v;
        }
    }
    let (values, vectors) = linalg::symmetric_eigen(&corr);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut loadings = Vec::with_capacity(k);
    for v in vectors.into_iter().take(k) {
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        loadings.push(if lead < 0.0 { v.iter().map(|x| -x).collect() } else { v });
    }
    let explained_variance_ratio = values.iter().take(k).map(|v| v.max(0.0) / total).collect();
    let projected = (0..n)
        .map(|i| loadings.iter().map(|l| (0..p).map(|j| z[j][i] * l[j]).sum()).collect())
        .collect();
    Ok(PcaResult { loadings, explained_variance_ratio, projected, means, std_devs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn normal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn summary_of_one_to_five() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.median, s.skewness), (3.0, 3.0, 0.0));
        assert_eq!((s.q1, s.q3, s.iqr), (2.0, 4.0, 2.0));
        assert_eq!((s.min, s.max), (1.0, 5.0));
        let c = summarize(&[7.0; 6]).unwrap();
        assert_eq!((c.std_dev, c.iqr), (0.0, 0.0));
        assert!(summarize(&[1.0]).is_err());
    }

    #[test]
    fn moments_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exp = Exp::new(1.5).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let s = summarize(&v).unwrap();
        // independent two-pass computation
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let m3 = v.iter().map(|x| (x - m) * (x - m) * (x - m)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| ((x - m) * (x - m)).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(s.mean, m, epsilon = 1e-10);
        assert_abs_diff_eq!(s.skewness, m3 / (m2 * m2.sqrt()), epsilon = 1e-10);
        assert_abs_diff_eq!(s.excess_kurtosis, m4 / (m2 * m2) - 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.std_dev, (m2 * n / (n - 1.0)).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn perfect_correlations() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let m = pearson_matrix(&[x.clone(), x.iter().map(|v| 2.0 * v).collect(), x.iter().map(|v| -v).collect()]).unwrap();
        assert_abs_diff_eq!(m.r[0][1].unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.r[0][2].unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(m.r[1][1], Some(1.0));
    }

    #[test]
    fn zero_variance_is_flagged() {
        let m = pearson_matrix(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]).unwrap();
        assert_eq!(m.r[0][1], None);
        assert_eq!(m.r[1][1], None);
    }

    #[test]
    fn correlation_matches_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|j| (0..300).map(|i| rng.gen::<f64>() + 0.01 * (i * j) as f64).collect())
            .collect();
        let m = pearson_matrix(&cols).unwrap();
        let n = 300.0;
        for a in 0..5 {
            for b in 0..5 {
                let (ma, mb) = (cols[a].iter().sum::<f64>() / n, cols[b].iter().sum::<f64>() / n);
                let cov = |x: &[f64], mx: f64, y: &[f64], my: f64| {
                    x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / (n - 1.0)
                };
                let r = cov(&cols[a], ma, &cols[b], mb)
                    / (cov(&cols[a], ma, &cols[a], ma) * cov(&cols[b], mb, &cols[b], mb)).sqrt();
                assert_abs_diff_eq!(m.r[a][b].unwrap(), r, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn correlation_p_values() {
        // r = 0.5 with n = 27 gives t = 0.5 * sqrt(25 / 0.75) = 2.8868 (25 df)
        let p = t_two_sided(0.5 * (25.0f64 / 0.75).sqrt(), 25.0);
        assert!((p - 0.007912738358005815).abs() < 1e-10, "{p}");
    }

    #[test]
    fn vif_cases() {
        let a = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let v = vif(&[a.clone(), b.clone()]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-10);
        let d = vif(&[a.clone(), a.clone(), b]).unwrap();
        assert!(d[0].is_infinite() && d[1].is_infinite());
    }

    #[test]
    fn two_feature_vif_closed_form() {
        let x = normal(500, 1);
        let e = normal(500, 2);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 0.9 * a + 0.43 * b).collect();
        let r = pearson(&x, &y).unwrap();
        let v = vif(&[x, y]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 / (1.0 - r * r), epsilon = 1e-9);
        assert_abs_diff_eq!(v[1], 1.0 / (1.0 - r * r), epsilon = 1e-9);
        // exactly r = 0.9 gives 5.263
        assert_abs_diff_eq!(1.0 / (1.0 - 0.81), 5.263, epsilon = 1e-3);
    }

    #[test]
    fn outliers() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        assert_eq!(iqr_outliers(&v).unwrap().indices, vec![9]);
        assert!(iqr_outliers(&[3.0; 8]).unwrap().indices.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let r = iqr_outliers(&u).unwrap();
        let brute: Vec<usize> = (0..u.len()).filter(|&i| u[i] < r.lower || u[i] > r.upper).collect();
        assert_eq!(r.indices, brute);
        assert!(r.indices.is_empty());
    }

    #[test]
    fn normality_calibration() {
        let mut pass = 0;
        for seed in 0..40 {
            let r = normality_test(&normal(5000, 100 + seed), 5000, seed).unwrap();
            if r.p_value > 0.01 {
                pass += 1;
            }
        }
        assert!(pass as f64 >= 0.95 * 40.0, "{pass}/40");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let exp: Vec<f64> = (0..5000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        assert!(normality_test(&exp, 5000, 1).unwrap().p_value < 1e-6);
        assert!(normality_test(&exp[..10], 5000, 1).is_err());
    }

    #[test]
    fn normality_matches_reference_values() {
        // scipy.stats.normaltest(np.arange(30.0) ** 2)
        let v: Vec<f64> = (0..30).map(|i| f64::from(i * i)).collect();
        let r = normality_test(&v, 5000, 0).unwrap();
        assert!((r.statistic - 3.861221920198055).abs() < 1e-9, "{}", r.statistic);
        assert!((r.p_value - 0.14505954581028516).abs() < 1e-9);
    }

    #[test]
    fn bp_zero_residuals() {
        let x = normal(50, 1);
        let r = breusch_pagan(&vec![0.0; 50], &[x]).unwrap();
        assert_eq!(r.lm_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn chi2_tail_reference() {
        assert_abs_diff_eq!(chi2_sf(3.8414588206941285, 1.0), 0.05, epsilon = 1e-10);
        assert_abs_diff_eq!(chi2_sf(5.991464547107983, 2.0), 0.05, epsilon = 1e-10);
    }

    #[test]
    fn pca_line_and_orthonormality() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let r = pca(&[x, y], 2).unwrap();
        assert_abs_diff_eq!(r.explained_variance_ratio[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.explained_variance_ratio[1], 0.0, epsilon = 1e-10);
        assert!(pca(&[vec![1.0, 2.0]], 2).is_err());
    }

    #[test]
    fn pca_isotropic() {
        let cols: Vec<Vec<f64>> = (0..3).map(|j| normal(10_000, 40 + j)).collect();
        let r = pca(&cols, 3).unwrap();
        for ratio in &r.explained_variance_ratio {
            assert!((ratio - 1.0 / 3.0).abs() < 0.03);
        }
        assert_abs_diff_eq!(r.explained_variance_ratio.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(seed in 0u64..1000, scale in 0.01f64..100.0, shift in -1e3f64..1e3) {
            let x = normal(60, seed);
            let y: Vec<f64> = normal(60, seed + 1).iter().zip(&x).map(|(a, b)| a + 0.5 * b).collect();
            let y2: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson(&x, &y).unwrap() - pearson(&x, &y2).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn vif_at_least_one(seed in 0u64..1000) {
            let cols: Vec<Vec<f64>> = (0..3).map(|j| normal(40, seed * 7 + j)).collect();
            for v in vif(&cols).unwrap() {
                prop_assert!(v >= 1.0 - 1e-12);
            }
        }

        #[test]
        fn bp_scale_invariant(seed in 0u64..1000, scale in 0.001f64..1000.0) {
            let x = normal(80, seed);
            let e: Vec<f64> = normal(80, seed + 9).iter().zip(&x).map(|(a, b)| a * (1.0 + b.abs())).collect();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            let a = breusch_pagan(&e, std::slice::from_ref(&x)).unwrap();
            let b = breusch_pagan(&scaled, &[x]).unwrap();
            prop_assert!((a.lm_statistic - b.lm_statistic).abs() < 1e-8 * (1.0 + a.lm_statistic));
        }

        #[test]
        fn pca_loadings_orthonormal(seed in 0u64..500) {
            let base = normal(200, seed);
            let cols: Vec<Vec<f64>> = (0..4)
                .map(|j| normal(200, seed * 13 + j).iter().zip(&base).map(|(a, b)| a + (j as f64) * 0.3 * b).collect())
                .collect();
            let r = pca(&cols, 4).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    let d = linalg::dot(&r.loadings[a], &r.loadings[b]);
                    let expected = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((d - expected).abs() < 1e-8);
                }
            }
            prop_assert!((r.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
