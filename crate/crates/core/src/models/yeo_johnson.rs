/// Fitted Yeo-Johnson power transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YeoJohnson {
    pub lambda: f64,
    pub log_likelihood: f64,
}

const LAMBDA_RANGE: (f64, f64) = (-5.0, 5.0);
const TOLERANCE: f64 = 1e-6;
const NEAR: f64 = 1e-12;

impl YeoJohnson {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, log_likelihood: f64::NAN }
    }

    pub fn apply(&self, y: f64) -> f64 {
        let l = self.lambda;
        if y >= 0.0 {
            if l.abs() < NEAR {
                y.ln_1p()
            } else {
                (l * y.ln_1p()).exp_m1() / l
            }
        } else if (l - 2.0).abs() < NEAR {
            -(-y).ln_1p()
        } else {
            -((2.0 - l) * (-y).ln_1p()).exp_m1() / (2.0 - l)
        }
    }

    /// Inverse transform. Values outside the image of the transform are
    /// clamped to its boundary.
    pub fn invert(&self, z: f64) -> f64 {
        let l = self.lambda;
        if z >= 0.0 {
            if l.abs() < NEAR {
                z.exp_m1()
            } else {
                let arg = (l * z).max(-1.0 + f64::EPSILON);
                (arg.ln_1p() / l).exp_m1()
            }
        } else if (l - 2.0).abs() < NEAR {
            -(-z).exp_m1()
        } else {
            let arg = (-(2.0 - l) * z).max(-1.0 + f64::EPSILON);
            -(arg.ln_1p() / (2.0 - l)).exp_m1()
        }
    }

    pub fn apply_all(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.apply(v)).collect()
    }
}

fn profile_log_likelihood(y: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let t = YeoJohnson::new(lambda);
    let z: Vec<f64> = y.iter().map(|&v| t.apply(v)).collect();
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = y.iter().map(|v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Maximum-likelihood power parameter by golden-section search.
pub fn yeo_johnson_fit(y: &[f64]) -> YeoJohnson {
    let f = |l: f64| profile_log_likelihood(y, l);
    let (mut a, mut b) = LAMBDA_RANGE;
    if y.len() < 2 || !f(1.0).is_finite() {
        return YeoJohnson { lambda: 1.0, log_likelihood: f(1.0) };
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let lambda = (a + b) / 2.0;
    YeoJohnson { lambda, log_likelihood: f(lambda) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summarize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_one_is_identity() {
        let t = YeoJohnson::new(1.0);
        for y in [-3.5, -1.0, 0.0, 0.25, 7.0] {
            assert!((t.apply(y) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        for l in [-5.0, -1.0, 0.0, 0.5, 2.0, 4.9] {
            assert_eq!(YeoJohnson::new(l).apply(0.0), 0.0);
        }
    }

    #[test]
    fn matches_textbook_branches() {
        let y: f64 = 2.0;
        let l: f64 = 0.5;
        assert!((YeoJohnson::new(l).apply(y) - ((y + 1.0).powf(l) - 1.0) / l).abs() < 1e-12);
        assert!((YeoJohnson::new(0.0).apply(y) - 3f64.ln()).abs() < 1e-12);
        let y: f64 = -2.0;
        let expect = -((1.0 - y).powf(2.0 - l) - 1.0) / (2.0 - l);
        assert!((YeoJohnson::new(l).apply(y) - expect).abs() < 1e-12);
        assert!((YeoJohnson::new(2.0).apply(y) + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reduces_left_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..3000).map(|_| 6.0 - (-rng.gen::<f64>().ln()) * 1.5).collect();
        let before = summarize(&y).unwrap().skewness;
        assert!(before < -1.0);
        let t = yeo_johnson_fit(&y);
        let after = summarize(&t.apply_all(&y)).unwrap().skewness;
        assert!(after.abs() < before.abs(), "{before} -> {after} (lambda {})", t.lambda);
    }

    #[test]
    fn fitted_lambda_maximizes_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..500).map(|_| rng.gen::<f64>().powi(3) * 10.0 - 1.0).collect();
        let t = yeo_johnson_fit(&y);
        let best_grid = (-500..=500)
            .map(|k| k as f64 / 100.0)
            .map(|l| profile_log_likelihood(&y, l))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(t.log_likelihood >= best_grid - 1e-6);
    }

    proptest! {
        #[test]
        fn round_trip_and_monotone(l in -5.0f64..5.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let t = YeoJohnson::new(l);
            for y in [a, b] {
                let back = t.invert(t.apply(y));
                prop_assert!((back - y).abs() <= 1e-9 * (1.0 + y.abs()), "{} -> {}", y, back);
            }
            if a + 1e-3 < b {
                prop_assert!(t.apply(a) < t.apply(b));
            }
        }
    }
}
