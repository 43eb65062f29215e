use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sdforge::pipeline::{run_pipeline, Phase, Pipeline, PipelineConfig, PipelineError, RunReport};
use sdforge::synth::{generate_synthetic_corpus, CorpusManifest, CorpusSpec};

fn small_corpus(dir: &Path, seed: u64) -> CorpusManifest {
    let spec = CorpusSpec { records_per_source: 1200, core: 500, seed, ..Default::default() };
    generate_synthetic_corpus(&spec, dir).unwrap()
}

fn quick_config(manifest: &CorpusManifest, out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_corpus(manifest);
    cfg.models = ["ridge", "rf", "stratified"].map(String::from).to_vec();
    cfg.cv_folds = 3;
    cfg.shap_rows = 40;
    cfg.shap_background = 30;
    cfg.min_stratum = 20;
    cfg.out = out;
    cfg
}

/// Independent recount of the Lipinski table straight from the dataset CSV.
fn recount_lipinski(dataset: &Path) -> [f64; 5] {
    let mut rdr = csv::Reader::from_path(dataset).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (mw, lp, hd, ha) = (col("MolWt"), col("logP_target"), col("NumHDonors"), col("NumHAcceptors"));
    let mut pass = [0usize; 5];
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let v = |i: usize| rec[i].parse::<f64>().unwrap();
        let ok = [v(mw) <= 500.0, v(lp) <= 5.0, v(hd) <= 5.0, v(ha) <= 10.0];
        for (k, o) in ok.iter().enumerate() {
            pass[k] += *o as usize;
        }
        pass[4] += ok.iter().all(|o| *o) as usize;
        n += 1;
    }
    pass.map(|p| 100.0 * p as f64 / n as f64)
}

#[test]
fn end_to_end_counts_report_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 5);
    let cfg = quick_config(&manifest, dir.path().join("out"));
    let report = run_pipeline(&cfg).unwrap();

    assert_eq!(report.conservation_violations(), Vec::<String>::new());
    let inter = report.intersect.as_ref().unwrap();
    assert_eq!(inter.intersected, manifest.core.len() as u64);
    assert_eq!(inter.collision_groups, manifest.collision_groups.len() as u64);
    let ids = sdforge::integrate::read_id_list(&cfg.out.join("intersection.ids")).unwrap();
    assert_eq!(ids.into_iter().collect::<std::collections::BTreeSet<_>>(), manifest.core);

    let text = fs::read_to_string(cfg.out.join("report.txt")).unwrap();
    for section in [
        "Index",
        "Integration",
        "Extraction",
        "Descriptor transform",
        "Descriptive statistics",
        "Correlation with target and collinearity",
        "Lipinski compliance",
        "Model comparison",
        "Stratified models",
        "Absolute error by logP category (rf)",
        "Shapley importance (rf)",
    ] {
        assert!(text.contains(section), "report lacks {section}");
    }
    let parsed = RunReport::from_json(&fs::read_to_string(cfg.out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(parsed, report);

    let lip = &report.eda.as_ref().unwrap().lipinski;
    let got = [lip.passes_molwt, lip.passes_logp, lip.passes_donors, lip.passes_acceptors, lip.compliant].map(|c| lip.rate(c));
    let want = recount_lipinski(&cfg.out.join("dataset.csv"));
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
    }
    assert!(report.explain.as_ref().unwrap().max_local_accuracy_gap <= 1e-6);
}

#[test]
fn resume_skips_phases_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 6);
    let mut cfg = quick_config(&manifest, dir.path().join("out"));
    let first = run_pipeline(&cfg).unwrap();
    let model_bytes = fs::read(cfg.out.join("models/rf.model")).unwrap();
    fs::remove_dir_all(cfg.out.join("models")).unwrap();

    cfg.resume = true;
    let second = run_pipeline(&cfg).unwrap();
    let skipped: Vec<(&str, bool)> = second.phases.iter().map(|p| (p.phase.as_str(), p.skipped)).collect();
    assert_eq!(
        skipped,
        [
            ("index", true),
            ("intersect", true),
            ("extract", true),
            ("transform", true),
            ("eda", true),
            ("fit", false),
            ("evaluate", false),
            ("explain", false),
        ]
    );
    assert_eq!(fs::read(cfg.out.join("models/rf.model")).unwrap(), model_bytes);
    assert_eq!(second.intersect, first.intersect);
    assert_eq!(second.evaluate, first.evaluate);

    let third = run_pipeline(&cfg).unwrap();
    assert!(third.phases.iter().all(|p| p.skipped));
    assert_eq!(third.conservation_violations(), Vec::<String>::new());
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 7);
    let files = ["index.tsv", "dataset.csv", "split.tsv", "models/ridge.model", "models/rf.model", "models/stratified.model"];
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for (k, workers) in [1, 2, 8].into_iter().enumerate() {
        let mut cfg = quick_config(&manifest, dir.path().join(format!("out{k}")));
        cfg.workers = workers;
        run_pipeline(&cfg).unwrap();
        outputs.push(files.iter().map(|f| fs::read(cfg.out.join(f)).unwrap()).collect());
    }
    for (k, f) in files.iter().enumerate() {
        assert!(outputs[1][k] == outputs[0][k] && outputs[2][k] == outputs[0][k], "{f} differs across worker counts");
    }
}

#[test]
fn phase_failure_names_phase_and_keeps_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 8);
    let mut cfg = quick_config(&manifest, dir.path().join("out"));
    cfg.min_stratum = 100_000;
    match run_pipeline(&cfg) {
        Err(PipelineError::Phase { phase, message }) => {
            assert_eq!(phase, "fit");
            assert!(message.contains("stratum"), "{message}");
        }
        other => panic!("expected fit failure, got {other:?}"),
    }
    for f in ["index.tsv", "intersection.ids", "common.sdf", "dataset.csv", "state/eda.json"] {
        assert!(cfg.out.join(f).exists(), "{f} missing");
    }
    assert!(!cfg.out.join("state/fit.json").exists());

    cfg.sources[1].paths.push(dir.path().join("absent.sdf"));
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));
}

#[test]
fn single_phase_reads_recorded_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 9);
    let cfg = quick_config(&manifest, dir.path().join("out"));
    let pipeline = Pipeline::new(cfg.clone()).unwrap();
    let mut report = RunReport::default();
    for phase in &Phase::ALL[1..] {
        let mut fresh = RunReport::default();
        pipeline.run_phase(*phase, &mut fresh).unwrap();
        assert!(pipeline.try_resume(*phase, &mut report));
    }
    let recorded = pipeline.recorded_report();
    assert_eq!(recorded.evaluate, report.evaluate);
    assert_eq!(recorded.conservation_violations(), Vec::<String>::new());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_sdforge");
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "source.a = missing.sdf\nsource.b = missing2.sdf\n").unwrap();
    let status = Command::new(bin).args(["index", "--config"]).arg(&conf).status().unwrap();
    assert_eq!(status.code(), Some(2));
    fs::write(&conf, "colour = red\n").unwrap();
    let status = Command::new(bin).args(["run", "--config"]).arg(&conf).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let corpus = dir.path().join("corpus");
    let status = Command::new(bin)
        .args(["gen-corpus", "--records", "300", "--core", "100", "--collisions", "2", "--seed", "3", "--dir"])
        .arg(&corpus)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let conf = corpus.join("pipeline.conf");
    let cfg = PipelineConfig::load(&conf).unwrap();
    assert_eq!((cfg.sources.len(), cfg.seed), (3, 3));
    let status = Command::new(bin).args(["intersect", "--config"]).arg(&conf).status().unwrap();
    assert_eq!(status.code(), Some(0));
    // extract needs the index, which was never built
    let status = Command::new(bin).args(["extract", "--config"]).arg(&conf).status().unwrap();
    assert_eq!(status.code(), Some(3));
}
