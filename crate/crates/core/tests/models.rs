use sdforge::models::{
    cross_validate, default_grid, evaluate, fit_gbm, fit_linear, residuals, split_stratified, write_model, Dataset,
    FittedModel, ForestParams, GbmParams, ModelFamily, ModelSpec, Penalty, SolverOptions,
};
use sdforge::stats::breusch_pagan;
use sdforge::synth::{synthetic_rows, MoleculeSize, TargetModel};

fn synthetic_dataset(n: usize, target: &TargetModel, seed: u64) -> Dataset {
    Dataset::from_rows(&synthetic_rows(n, MoleculeSize::default(), target, seed)).unwrap()
}

/// Nonlinear truth with constant noise: a correctly specified learner leaves
/// residuals with no variance structure, a linear one does not.
#[test]
fn ensemble_residuals_pass_breusch_pagan_where_linear_fail() {
    let target = TargetModel::default().homoskedastic();
    let seeds = 20;
    let mut agree = 0;
    for seed in 0..seeds {
        let data = synthetic_dataset(6000, &target, 1000 + seed);
        let split = split_stratified(&data.y, 0.2, 10, seed).unwrap();
        let (train, test) = (data.subset(&split.train), data.subset(&split.test));
        let ridge = fit_linear(&train, Penalty::Ridge { lambda: 1e-3 }, &SolverOptions::default()).unwrap();
        let params = GbmParams {
            n_estimators: 1000,
            max_depth: Some(2),
            learning_rate: 0.1,
            min_samples_leaf: 5,
            subsample: 0.8,
        };
        let gbm = fit_gbm(&train, &params, seed).unwrap();
        let cols = test.columns();
        let bp_ridge = breusch_pagan(&residuals(&ridge, &test), &cols).unwrap().p_value;
        let bp_gbm = breusch_pagan(&residuals(&gbm, &test), &cols).unwrap().p_value;
        let r2_ridge = evaluate(&ridge, &test).r2.unwrap();
        let r2_gbm = evaluate(&gbm, &test).r2.unwrap();
        let ok = r2_gbm > r2_ridge && bp_gbm >= 0.05 && bp_ridge < 0.05;
        println!("seed {seed}: R2 ridge {r2_ridge:.3} gbm {r2_gbm:.3}; BP p ridge {bp_ridge:.2e} gbm {bp_gbm:.3}");
        agree += ok as usize;
    }
    assert!(agree * 10 >= seeds as usize * 9, "{agree}/{seeds} seeds agree");
}

fn model_bytes(m: &FittedModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(m, &mut out).unwrap();
    out
}

#[test]
fn fits_and_search_are_worker_independent() {
    let data = synthetic_dataset(800, &TargetModel::default(), 3);
    let solver = SolverOptions::default();
    let spec = ModelSpec::Forest(ForestParams { n_estimators: 40, ..Default::default() });
    let reference = model_bytes(&spec.fit(&data, 9, 1, &solver).unwrap());
    let grid = default_grid(ModelFamily::Forest);
    let cv1 = cross_validate(&data, &grid[..2], 3, 4, 1, &solver).unwrap();
    for workers in [2, 8] {
        assert_eq!(model_bytes(&spec.fit(&data, 9, workers, &solver).unwrap()), reference);
        assert_eq!(cross_validate(&data, &grid[..2], 3, 4, workers, &solver).unwrap(), cv1);
    }
    let changed = model_bytes(&spec.fit(&data, 10, 1, &solver).unwrap());
    assert_ne!(changed, reference);
}
