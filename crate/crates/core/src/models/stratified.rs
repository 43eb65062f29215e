use crate::descriptors::lipinski_check;

use super::{fit_linear, Dataset, LinearModel, ModelError, Penalty, Regressor, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Lipinski-compliant, drug-like.
    A,
    /// At least one criterion violated.
    B,
}

impl Route {
    pub fn label(&self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
        }
    }
}

/// How the logP criterion is evaluated when routing unseen rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingMode {
    /// MolWt, donors and acceptors only.
    FeatureOnly,
    /// Adds logP ≤ 5 using a global ridge model's prediction.
    ProvisionalLogp,
}

impl RoutingMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FeatureOnly => "feature",
            Self::ProvisionalLogp => "provisional",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "feature" | "feature-only" => Some(Self::FeatureOnly),
            "provisional" => Some(Self::ProvisionalLogp),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StratifiedOptions {
    pub lambda: f64,
    pub mode: RoutingMode,
    pub min_stratum: usize,
}

impl Default for StratifiedOptions {
    fn default() -> Self {
        Self { lambda: 1e-3, mode: RoutingMode::ProvisionalLogp, min_stratum: 50 }
    }
}

/// Two ridge models behind a Lipinski router.
#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedPredictor {
    pub model_a: LinearModel,
    pub model_b: LinearModel,
    /// Present in provisional mode; supplies the routing logP estimate.
    pub global: Option<LinearModel>,
    pub mode: RoutingMode,
    molwt: usize,
    donors: usize,
    acceptors: usize,
}

fn lipinski_columns(names: &[String]) -> Result<(usize, usize, usize), ModelError> {
    let find = |n: &str| {
        names
            .iter()
            .position(|f| f == n)
            .ok_or_else(|| ModelError::Data(format!("feature {n} is required for stratification")))
    };
    Ok((find("MolWt")?, find("NumHDonors")?, find("NumHAcceptors")?))
}

impl StratifiedPredictor {
    pub fn new(
        model_a: LinearModel,
        model_b: LinearModel,
        global: Option<LinearModel>,
        mode: RoutingMode,
    ) -> Result<Self, ModelError> {
        if model_a.feature_names != model_b.feature_names
            || global.as_ref().is_some_and(|g| g.feature_names != model_a.feature_names)
        {
            return Err(ModelError::Data("stratum models disagree on features".into()));
        }
        if mode == RoutingMode::ProvisionalLogp && global.is_none() {
            return Err(ModelError::InvalidParameter("provisional routing needs a global model".into()));
        }
        let (molwt, donors, acceptors) = lipinski_columns(&model_a.feature_names)?;
        Ok(Self { model_a, model_b, global, mode, molwt, donors, acceptors })
    }

    /// Routes on the row's own features; the logP criterion applies only
    /// when an estimate is given.
    pub fn route_with(&self, x: &[f64], logp_estimate: Option<f64>) -> Route {
        let v = lipinski_check(x[self.molwt], logp_estimate.unwrap_or(f64::NEG_INFINITY), x[self.donors], x[self.acceptors]);
        if v.compliant {
            Route::A
        } else {
            Route::B
        }
    }

    pub fn logp_estimate(&self, x: &[f64]) -> Option<f64> {
        match self.mode {
            RoutingMode::FeatureOnly => None,
            RoutingMode::ProvisionalLogp => self.global.as_ref().map(|g| g.predict_row(x)),
        }
    }

    pub fn route(&self, x: &[f64]) -> Route {
        self.route_with(x, self.logp_estimate(x))
    }

    pub fn predict_routed(&self, x: &[f64], route: Route) -> f64 {
        match route {
            Route::A => self.model_a.predict_row(x),
            Route::B => self.model_b.predict_row(x),
        }
    }
}

impl Regressor for StratifiedPredictor {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_routed(x, self.route(x))
    }

    fn n_features(&self) -> usize {
        self.model_a.feature_names.len()
    }
}

/// Lipinski stratum of a training row, using its true logP.
pub fn training_route(data: &Dataset, i: usize) -> Result<Route, ModelError> {
    let (m, d, a) = lipinski_columns(&data.feature_names)?;
    let x = &data.x[i];
    Ok(if lipinski_check(x[m], data.y[i], x[d], x[a]).compliant { Route::A } else { Route::B })
}

pub fn fit_stratified(train: &Dataset, opts: &StratifiedOptions) -> Result<StratifiedPredictor, ModelError> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..train.n() {
        match training_route(train, i)? {
            Route::A => a.push(i),
            Route::B => b.push(i),
        }
    }
    for (name, rows) in [("A", &a), ("B", &b)] {
        if rows.len() < opts.min_stratum {
            return Err(ModelError::StratumTooSmall { name, size: rows.len(), min: opts.min_stratum });
        }
    }
    let solver = SolverOptions::default();
    let penalty = Penalty::Ridge { lambda: opts.lambda };
    let model_a = fit_linear(&train.subset(&a), penalty, &solver)?;
    let model_b = fit_linear(&train.subset(&b), penalty, &solver)?;
    let global = match opts.mode {
        RoutingMode::ProvisionalLogp => Some(fit_linear(train, penalty, &solver)?),
        RoutingMode::FeatureOnly => None,
    };
    StratifiedPredictor::new(model_a, model_b, global, opts.mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedPrediction {
    pub predictions: Vec<f64>,
    pub routes: Vec<Route>,
}

impl StratifiedPrediction {
    pub fn count(&self, route: Route) -> usize {
        self.routes.iter().filter(|r| **r == route).count()
    }
}

pub fn predict_stratified(predictor: &StratifiedPredictor, rows: &[Vec<f64>]) -> StratifiedPrediction {
    let routes: Vec<Route> = rows.iter().map(|x| predictor.route(x)).collect();
    let predictions = rows.iter().zip(&routes).map(|(x, r)| predictor.predict_routed(x, *r)).collect();
    StratifiedPrediction { predictions, routes }
}

/// Fraction of rows whose inference-time route differs from the route implied
/// by their true logP.
pub fn routing_disagreement(predictor: &StratifiedPredictor, data: &Dataset) -> f64 {
    if data.n() == 0 {
        return 0.0;
    }
    let differ = (0..data.n())
        .filter(|&i| predictor.route(&data.x[i]) != predictor.route_with(&data.x[i], Some(data.y[i])))
        .count();
    differ as f64 / data.n() as f64
}

#[cfg(test)]
mod tests {
    use super::super::metrics;
    use super::super::testdata::two_populations;
    use super::*;
    use crate::descriptors::lipinski_check;

    #[test]
    fn table_medians_route_to_a() {
        let d = two_populations(2000, 1);
        let p = fit_stratified(&d, &StratifiedOptions::default()).unwrap();
        let row = [347.3, 60.0, 1.0, 5.0, 4.0, 1.0, 0.3];
        assert_eq!(p.route_with(&row, Some(2.9)), Route::A);
        assert_eq!(p.route_with(&[600.0, 60.0, 1.0, 5.0, 4.0, 1.0, 0.3], Some(2.9)), Route::B);
        assert_eq!(p.route_with(&[600.0, 60.0, 1.0, 5.0, 4.0, 1.0, 0.3], None), Route::B);
    }

    #[test]
    fn routes_match_lipinski_per_row() {
        let d = two_populations(3000, 2);
        for mode in [RoutingMode::FeatureOnly, RoutingMode::ProvisionalLogp] {
            let p = fit_stratified(&d, &StratifiedOptions { mode, ..Default::default() }).unwrap();
            let out = predict_stratified(&p, &d.x);
            assert_eq!(out.count(Route::A) + out.count(Route::B), d.n());
            for (x, r) in d.x.iter().zip(&out.routes) {
                let logp = p.logp_estimate(x).unwrap_or(f64::NEG_INFINITY);
                let v = lipinski_check(x[0], logp, x[2], x[3]);
                assert_eq!(*r == Route::A, v.compliant);
            }
        }
    }

    #[test]
    fn training_strata_partition_rows() {
        let d = two_populations(1000, 3);
        let routes: Vec<Route> = (0..d.n()).map(|i| training_route(&d, i).unwrap()).collect();
        let a = routes.iter().filter(|r| **r == Route::A).count();
        let b = routes.iter().filter(|r| **r == Route::B).count();
        assert_eq!(a + b, d.n());
        assert!(a > 0 && b > 0);
    }

    #[test]
    fn small_stratum_rejected() {
        let d = two_populations(100, 4);
        let err = fit_stratified(&d, &StratifiedOptions { min_stratum: 60, ..Default::default() }).unwrap_err();
        assert!(matches!(err, ModelError::StratumTooSmall { .. }));
    }

    #[test]
    fn stratified_beats_global_on_compliant_rows() {
        let train = two_populations(4000, 5);
        let test = two_populations(2000, 6);
        let p = fit_stratified(&train, &StratifiedOptions::default()).unwrap();
        let global = p.global.clone().unwrap();
        let compliant: Vec<usize> = (0..test.n()).filter(|&i| training_route(&test, i).unwrap() == Route::A).collect();
        let sub = test.subset(&compliant);
        let strat = metrics(&p.predict(&sub.x), &sub.y).rmse;
        let glob = metrics(&global.predict(&sub.x), &sub.y).rmse;
        assert!(strat <= glob, "stratified {strat} global {glob}");
        assert!(routing_disagreement(&p, &test) < 0.2);
    }
}
