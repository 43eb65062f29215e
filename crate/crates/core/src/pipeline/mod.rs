//! Phase orchestration over plain-file artifacts.
//!
//! Every phase reads its inputs from the output directory and writes its
//! artifacts there, then records a state file `state/<phase>.json` holding
//! its summary, the artifact list and a configuration fingerprint. With
//! `resume` set, a phase whose state matches and whose artifacts all exist
//! is skipped; once any phase runs, every later phase runs too.

mod config;
mod report;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use md5::{Digest, Md5};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acquire::{self, HttpFetcher, RetryPolicy};
use crate::descriptors::{self, lipinski_check, AtomicWeights, DescriptorRow, TpsaContributionTable, TransformOptions};
use crate::explain::{self, ShapConfig};
use crate::index;
use crate::integrate;
use crate::models::{
    self, cross_validate, default_grid, derive_seed, fit_stratified, fit_wls, predict_stratified, read_model_file,
    routing_disagreement, training_route, write_model_file, Dataset, FittedModel, ModelFamily, ModelSpec, Regressor,
    Route, SolverOptions, Split, StratifiedOptions,
};
use crate::stats;

pub use config::{ConfigError, PipelineConfig, SourceDef, MODEL_CHOICES};
pub use report::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Fetch,
    Index,
    Intersect,
    Extract,
    Transform,
    Eda,
    Fit,
    Evaluate,
    Explain,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Fetch,
        Phase::Index,
        Phase::Intersect,
        Phase::Extract,
        Phase::Transform,
        Phase::Eda,
        Phase::Fit,
        Phase::Evaluate,
        Phase::Explain,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Fetch => "fetch",
            Phase::Index => "index",
            Phase::Intersect => "intersect",
            Phase::Extract => "extract",
            Phase::Transform => "transform",
            Phase::Eda => "eda",
            Phase::Fit => "fit",
            Phase::Evaluate => "evaluate",
            Phase::Explain => "explain",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("phase {phase}: {message}")]
    Phase { phase: &'static str, message: String },
}

fn fail<E: std::fmt::Display>(phase: Phase) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Phase { phase: phase.name(), message: e.to_string() }
}

/// Artifact paths under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn state(&self, phase: Phase) -> PathBuf {
        self.out.join("state").join(format!("{}.json", phase.name()))
    }
    pub fn fetch_log(&self) -> PathBuf {
        self.out.join("fetch.tsv")
    }
    pub fn index(&self) -> PathBuf {
        self.out.join("index.tsv")
    }
    pub fn source_ids(&self, source: &str) -> PathBuf {
        self.out.join("ids").join(format!("{source}.ids"))
    }
    pub fn intersection(&self) -> PathBuf {
        self.out.join("intersection.ids")
    }
    pub fn audit(&self) -> PathBuf {
        self.out.join("audit.tsv")
    }
    pub fn common(&self) -> PathBuf {
        self.out.join("common.sdf")
    }
    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset.csv")
    }
    pub fn eda(&self, name: &str) -> PathBuf {
        self.out.join("eda").join(name)
    }
    pub fn split(&self) -> PathBuf {
        self.out.join("split.tsv")
    }
    pub fn cv(&self) -> PathBuf {
        self.out.join("cv.tsv")
    }
    pub fn model(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.model"))
    }
    pub fn evaluation(&self) -> PathBuf {
        self.out.join("evaluation.csv")
    }
    pub fn error_by_category(&self) -> PathBuf {
        self.out.join("error_by_category.csv")
    }
    pub fn stratified(&self) -> PathBuf {
        self.out.join("stratified.csv")
    }
    pub fn shap(&self) -> PathBuf {
        self.out.join("shap")
    }
}

#[derive(Serialize, Deserialize)]
struct PhaseState {
    fingerprint: String,
    artifacts: Vec<PathBuf>,
    summary: Value,
}

const EDA_FILES: [&str; 6] = ["summary.csv", "correlation.csv", "vif.csv", "outliers.csv", "lipinski.csv", "pca.csv"];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, csv::Error> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub layout: Layout,
    fingerprint: String,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate(false)?;
        let mut canonical = config.clone();
        canonical.workers = 0;
        canonical.resume = false;
        let fingerprint = Md5::digest(format!("{canonical:?}").as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let layout = Layout { out: config.out.clone() };
        Ok(Self { config, layout, fingerprint })
    }

    fn primary(&self) -> &SourceDef {
        self.config.primary_source().expect("validated config has a primary source")
    }

    /// Loads a phase's recorded state into `report` when it is reusable.
    pub fn try_resume(&self, phase: Phase, report: &mut RunReport) -> bool {
        let Ok(text) = fs::read_to_string(self.layout.state(phase)) else {
            return false;
        };
        let Ok(state) = serde_json::from_str::<PhaseState>(&text) else {
            return false;
        };
        if state.fingerprint != self.fingerprint || !state.artifacts.iter().all(|a| self.layout.out.join(a).exists()) {
            return false;
        }
        set_summary(report, phase, state.summary).is_ok()
    }

    /// Report assembled from whatever phase states are on disk.
    pub fn recorded_report(&self) -> RunReport {
        let mut report = RunReport { seed: self.config.seed, ..Default::default() };
        for phase in Phase::ALL {
            let state = fs::read_to_string(self.layout.state(phase))
                .ok()
                .and_then(|t| serde_json::from_str::<PhaseState>(&t).ok());
            if let Some(state) = state {
                if set_summary(&mut report, phase, state.summary).is_ok() {
                    report.phases.push(PhaseTiming { phase: phase.name().into(), seconds: 0.0, skipped: true });
                }
            }
        }
        report
    }

    fn save_state(&self, phase: Phase, report: &RunReport, artifacts: Vec<PathBuf>) -> Result<(), PipelineError> {
        let artifacts = artifacts
            .into_iter()
            .map(|p| p.strip_prefix(&self.layout.out).map(Path::to_path_buf).unwrap_or(p))
            .collect();
        let state = PhaseState { fingerprint: self.fingerprint.clone(), artifacts, summary: get_summary(report, phase) };
        let path = self.layout.state(phase);
        fs::create_dir_all(path.parent().unwrap()).map_err(fail(phase))?;
        fs::write(&path, serde_json::to_string_pretty(&state).expect("state serializes")).map_err(fail(phase))
    }

    /// Summary of an upstream phase: from `report` if present, else from its state file.
    fn upstream<T: for<'de> Deserialize<'de>>(&self, phase: Phase, current: Phase, report: &RunReport) -> Result<T, PipelineError> {
        let value = match get_summary(report, phase) {
            Value::Null => {
                let text = fs::read_to_string(self.layout.state(phase)).map_err(|e| PipelineError::Phase {
                    phase: current.name(),
                    message: format!("{} has not run: {e}", phase.name()),
                })?;
                serde_json::from_str::<PhaseState>(&text).map_err(fail(current))?.summary
            }
            v => v,
        };
        serde_json::from_value(value).map_err(fail(current))
    }

    /// Runs one phase unconditionally and records its state.
    pub fn run_phase(&self, phase: Phase, report: &mut RunReport) -> Result<(), PipelineError> {
        let _ = fs::remove_file(self.layout.state(phase));
        fs::create_dir_all(&self.layout.out).map_err(fail(phase))?;
        let artifacts = match phase {
            Phase::Fetch => self.fetch(report)?,
            Phase::Index => self.index(report)?,
            Phase::Intersect => self.intersect(report)?,
            Phase::Extract => self.extract(report)?,
            Phase::Transform => self.transform(report)?,
            Phase::Eda => self.eda(report)?,
            Phase::Fit => self.fit(report)?,
            Phase::Evaluate => self.evaluate(report)?,
            Phase::Explain => self.explain(report)?,
        };
        self.save_state(phase, report, artifacts)
    }

    fn fetch(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Fetch;
        let cfg = &self.config;
        let (Some(manifest), Some(dir)) = (&cfg.manifest, &cfg.fetch_dir) else {
            return Err(fail(ph)("no manifest configured"));
        };
        let entries = acquire::load_manifest(manifest).map_err(fail(ph))?;
        fs::create_dir_all(dir).map_err(fail(ph))?;
        let policy = RetryPolicy { max_retries: cfg.fetch_retries, seed: cfg.seed, ..Default::default() };
        let result = acquire::fetch_all(&entries, dir, &HttpFetcher::default(), cfg.workers, &policy);
        let mut w = BufWriter::new(File::create(self.layout.fetch_log()).map_err(fail(ph))?);
        writeln!(w, "dest\tstatus\tattempts\tbytes\tresumed\tskipped").map_err(fail(ph))?;
        for e in &result.entries {
            let status = match &e.status {
                acquire::EntryStatus::Ok => "ok".to_string(),
                acquire::EntryStatus::ChecksumMismatch { actual } => format!("checksum mismatch ({actual})"),
                acquire::EntryStatus::FailedAfterRetries { last_error } => format!("failed ({last_error})"),
            };
            writeln!(w, "{}\t{status}\t{}\t{}\t{}\t{}", e.dest.display(), e.attempts, e.bytes_transferred, e.resumed, e.skipped)
                .map_err(fail(ph))?;
        }
        w.flush().map_err(fail(ph))?;
        let summary = FetchSummary {
            entries: result.entries.len(),
            ok: result.ok(),
            failed: result.failed(),
            resumed: result.entries.iter().filter(|e| e.resumed).count(),
            skipped: result.entries.iter().filter(|e| e.skipped).count(),
        };
        log::info!("[fetch] {} of {} entries ok", summary.ok, summary.entries);
        let failed = summary.failed;
        report.fetch = Some(summary);
        if failed > 0 {
            return Err(fail(ph)(format!("{failed} entries failed; see {}", self.layout.fetch_log().display())));
        }
        Ok(vec![self.layout.fetch_log()])
    }

    fn index(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Index;
        let src = self.primary();
        let (idx, stats) = index::build_index(&src.paths, &self.config.key_tag, self.config.workers).map_err(fail(ph))?;
        index::write_index_file(&idx, &self.layout.index()).map_err(fail(ph))?;
        let summary = IndexSummary {
            files: src.paths.len(),
            bytes_read: stats.bytes_read.iter().sum(),
            indexed: idx.len() as u64,
            skipped: stats.skipped.iter().sum(),
            malformed: stats.malformed.iter().sum(),
            duplicates: idx.duplicate_log.len() as u64,
        };
        log::info!("[index] {} identifiers from {} files of source {}", summary.indexed, summary.files, src.name);
        report.index = Some(summary);
        Ok(vec![self.layout.index()])
    }

    fn intersect(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Intersect;
        let cfg = &self.config;
        let mut full_sets = Vec::new();
        let mut short_sets = Vec::new();
        let mut artifacts = Vec::new();
        fs::create_dir_all(self.layout.out.join("ids")).map_err(fail(ph))?;
        for s in &cfg.sources {
            let set = integrate::extract_identifiers(&s.name, &s.paths, &cfg.key_tag).map_err(fail(ph))?;
            log::info!("[intersect] source {}: {} identifiers in {} records", s.name, set.len(), set.stats.scanned);
            let path = self.layout.source_ids(&s.name);
            integrate::write_id_list(&path, &set.identifiers).map_err(fail(ph))?;
            artifacts.push(path);
            full_sets.push(set);
            short_sets.push(integrate::extract_identifiers(&s.name, &s.paths, &cfg.short_tag).map_err(fail(ph))?);
        }
        let common = integrate::intersect(&full_sets, cfg.min_sources).map_err(fail(ph))?;
        let common_short = integrate::intersect(&short_sets, cfg.min_sources).map_err(fail(ph))?;
        integrate::write_id_list(&self.layout.intersection(), &common).map_err(fail(ph))?;
        artifacts.push(self.layout.intersection());

        let all_paths: Vec<PathBuf> = cfg.sources.iter().flat_map(|s| s.paths.iter().cloned()).collect();
        let audit = integrate::audit_collisions(&all_paths, &cfg.short_tag, &cfg.key_tag).map_err(fail(ph))?;
        write_audit(&self.layout.audit(), &audit).map_err(fail(ph))?;
        artifacts.push(self.layout.audit());
        if !audit.findings.is_empty() {
            log::warn!("[intersect] {} short keys map to more than one full identifier", audit.findings.len());
        }
        log::info!(
            "[intersect] {} identifiers in >= {} sources ({} by short key)",
            common.len(),
            cfg.min_sources.unwrap_or(cfg.sources.len()),
            common_short.len()
        );
        report.intersect = Some(IntersectSummary {
            primary: self.primary().name.clone(),
            sources: full_sets
                .iter()
                .map(|s| SourceCount {
                    name: s.source_name.clone(),
                    scanned: s.stats.scanned,
                    identifiers: s.len() as u64,
                    missing_key: s.stats.missing_key,
                    malformed: s.stats.malformed,
                })
                .collect(),
            min_sources: cfg.min_sources.unwrap_or(cfg.sources.len()),
            intersected: common.len() as u64,
            intersected_short: common_short.len() as u64,
            collision_groups: audit.findings.len() as u64,
            audit_missing_short: audit.missing_short,
            audit_missing_full: audit.missing_full,
        });
        Ok(artifacts)
    }

    fn extract(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Extract;
        let idx = index::read_index_file(&self.layout.index()).map_err(fail(ph))?;
        let targets = integrate::read_id_list(&self.layout.intersection()).map_err(fail(ph))?;
        let (plan, missing) = integrate::plan_extraction(&idx, &targets);
        if !missing.is_empty() {
            log::warn!("[extract] {} intersected identifiers are not in the index", missing.len());
        }
        let verify = self.config.verify.then_some(self.config.key_tag.as_str());
        let out = integrate::extract_records_to_file(&idx, &plan, &self.layout.common(), verify).map_err(fail(ph))?;
        log::info!("[extract] {} records, {} bytes", out.written, out.bytes_written);
        report.extract = Some(ExtractSummary {
            targets: targets.iter().collect::<BTreeSet<_>>().len() as u64,
            extracted: out.written,
            not_in_index: missing.len() as u64,
            verification_failures: out.failures.len() as u64,
            bytes_written: out.bytes_written,
        });
        Ok(vec![self.layout.common()])
    }

    fn transform(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Transform;
        let cfg = &self.config;
        let opts = TransformOptions {
            target_tag: cfg.target_tag.clone(),
            inchikey_tag: cfg.short_tag.clone(),
            inchi_tag: cfg.key_tag.clone(),
            smiles_tag: cfg.smiles_tag.clone(),
            workers: cfg.workers,
        };
        let r = descriptors::transform_dataset(
            &self.layout.common(),
            &self.layout.dataset(),
            &opts,
            &AtomicWeights::default(),
            &TpsaContributionTable::builtin(),
        )
        .map_err(fail(ph))?;
        log::info!("[transform] {} rows, {} excluded", r.rows, r.excluded_total());
        report.transform = Some(TransformSummary {
            records: r.records,
            rows: r.rows,
            excluded: r.excluded_total(),
            exclusion_reasons: r.excluded.into_iter().collect(),
            warnings: r.warnings,
        });
        Ok(vec![self.layout.dataset()])
    }

    fn eda(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Eda;
        let rows = descriptors::read_dataset(&self.layout.dataset()).map_err(fail(ph))?;
        let summary = eda_summary(&rows, self.config.normality_subsample, self.config.seed).map_err(fail(ph))?;
        fs::create_dir_all(self.layout.out.join("eda")).map_err(fail(ph))?;
        self.write_eda(&rows, &summary).map_err(fail(ph))?;
        log::info!("[eda] {} rows, {} Lipinski compliant", summary.rows, summary.lipinski.compliant);
        report.eda = Some(summary);
        Ok(EDA_FILES.iter().map(|f| self.layout.eda(f)).collect())
    }

    fn write_eda(&self, rows: &[DescriptorRow], s: &EdaSummary) -> Result<(), csv::Error> {
        let mut w = csv_writer(&self.layout.eda("summary.csv"))?;
        w.write_record(["column", "mean", "median", "std_dev", "min", "max", "iqr", "skewness", "excess_kurtosis"])?;
        for c in &s.columns {
            w.write_record(
                std::iter::once(c.name.clone()).chain(
                    [c.mean, c.median, c.std_dev, c.min, c.max, c.iqr, c.skewness, c.excess_kurtosis]
                        .iter()
                        .map(f64::to_string),
                ),
            )?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.eda("correlation.csv"))?;
        w.write_record(["feature", "r", "p_value"])?;
        for c in &s.target_correlations {
            w.write_record([c.feature.clone(), opt_str(c.r), opt_str(c.p_value)])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.eda("vif.csv"))?;
        w.write_record(["feature", "vif"])?;
        for v in &s.vif {
            w.write_record([v.feature.clone(), v.vif.map_or("inf".into(), |x| x.to_string())])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.eda("outliers.csv"))?;
        w.write_record(["row", "inchikey", "logp"])?;
        let (lo, hi) = s.outlier_bounds;
        for (i, r) in rows.iter().enumerate().filter(|(_, r)| r.logp_target < lo || r.logp_target > hi) {
            w.write_record([i.to_string(), r.inchikey.clone(), r.logp_target.to_string()])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.eda("lipinski.csv"))?;
        w.write_record(["criterion", "passing", "n", "percent"])?;
        let l = &s.lipinski;
        for (name, count) in [
            ("molwt", l.passes_molwt),
            ("logp", l.passes_logp),
            ("donors", l.passes_donors),
            ("acceptors", l.passes_acceptors),
            ("all", l.compliant),
        ] {
            w.write_record([name.to_string(), count.to_string(), l.n.to_string(), l.rate(count).to_string()])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.eda("pca.csv"))?;
        w.write_record(["component", "explained_variance_ratio"])?;
        for (k, r) in s.pca_explained.iter().enumerate() {
            w.write_record([(k + 1).to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    fn load_modeling_data(&self, ph: Phase) -> Result<(Dataset, Split), PipelineError> {
        let rows = descriptors::read_dataset(&self.layout.dataset()).map_err(fail(ph))?;
        let data = Dataset::from_rows(&rows).map_err(fail(ph))?;
        let split = read_split(&self.layout.split(), &data).map_err(fail(ph))?;
        Ok((data, split))
    }

    fn fit(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Fit;
        let cfg = &self.config;
        let rows = descriptors::read_dataset(&self.layout.dataset()).map_err(fail(ph))?;
        let data = Dataset::from_rows(&rows).map_err(fail(ph))?;
        let split = models::split_stratified(&data.y, cfg.test_fraction, cfg.split_bins, cfg.seed).map_err(fail(ph))?;
        write_split(&self.layout.split(), &data, &split).map_err(fail(ph))?;
        let train = data.subset(&split.train);
        fs::create_dir_all(self.layout.out.join("models")).map_err(fail(ph))?;

        let solver = SolverOptions::default();
        let mut cv_lines = Vec::new();
        let mut summaries = Vec::new();
        let mut artifacts = vec![self.layout.split(), self.layout.cv()];
        let mut save = |name: &str, model: &FittedModel, spec: String, cv_r2: Option<f64>| -> Result<(), PipelineError> {
            let path = self.layout.model(name);
            write_model_file(model, &path).map_err(fail(ph))?;
            log::info!("[fit] {name}: {spec}");
            artifacts.push(path);
            summaries.push(ModelSummary {
                name: name.into(),
                family: model.family().into(),
                spec,
                cv_r2,
                ..Default::default()
            });
            Ok(())
        };
        for name in &cfg.models {
            if name == "stratified" {
                let opts = StratifiedOptions { lambda: cfg.stratified_lambda, mode: cfg.routing, min_stratum: cfg.min_stratum };
                let model = FittedModel::Stratified(fit_stratified(&train, &opts).map_err(fail(ph))?);
                let spec = format!("ridge lambda={} per stratum, routing={}", cfg.stratified_lambda, cfg.routing.name());
                save(name, &model, spec, None)?;
                continue;
            }
            let family: ModelFamily = name.parse().map_err(fail(ph))?;
            let grid = default_grid(family);
            let cv = cross_validate(&train, &grid, cfg.cv_folds, cfg.seed, cfg.workers, &solver).map_err(fail(ph))?;
            for (spec, score) in &cv.scores {
                cv_lines.push(format!("{name}\t{spec}\t{score}"));
            }
            let best_score = cv.scores.iter().find(|(s, _)| *s == cv.best).map(|(_, r)| *r);
            let model = cv.best.fit(&train, cfg.seed, cfg.workers, &solver).map_err(fail(ph))?;
            save(name, &model, cv.best.to_string(), best_score)?;
            if family == ModelFamily::Ridge {
                let (FittedModel::Linear(base), ModelSpec::Linear { penalty, .. }) = (&model, cv.best) else {
                    unreachable!("ridge grid yields linear models");
                };
                let wls = FittedModel::Linear(fit_wls(&train, base).map_err(fail(ph))?);
                save("ridge_wls", &wls, format!("{} weighted", cv.best), None)?;
                let yj_spec = ModelSpec::Linear { penalty, yeo_johnson: true };
                let yj = yj_spec.fit(&train, cfg.seed, cfg.workers, &solver).map_err(fail(ph))?;
                save("ridge_yeo_johnson", &yj, yj_spec.to_string(), None)?;
            }
        }
        let mut text = String::from("model\tspec\tmean_r2\n");
        cv_lines.iter().for_each(|l| {
            text.push_str(l);
            text.push('\n');
        });
        fs::write(self.layout.cv(), text).map_err(fail(ph))?;
        report.fit = Some(FitSummary { train: split.train.len() as u64, test: split.test.len() as u64, models: summaries });
        Ok(artifacts)
    }

    fn evaluate(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Evaluate;
        let fit: FitSummary = self.upstream(Phase::Fit, ph, report)?;
        let (data, split) = self.load_modeling_data(ph)?;
        let train = data.subset(&split.train);
        let test = data.subset(&split.test);
        let train_cols = train.columns();

        let mut models = Vec::new();
        let mut by_category = Vec::new();
        let mut stratified = None;
        let mut loaded = Vec::new();
        for m in &fit.models {
            let model = read_model_file(&self.layout.model(&m.name)).map_err(fail(ph))?;
            let bp = stats::breusch_pagan(&models::residuals(&model, &train), &train_cols).map_err(fail(ph))?;
            let test_metrics = models::evaluate(&model, &test);
            log::info!("[evaluate] {}: test R2 {}", m.name, opt_str(test_metrics.r2));
            models.push(ModelSummary {
                train: Some(models::evaluate(&model, &train).into()),
                test: Some(test_metrics.into()),
                breusch_pagan: Some(BpSummary {
                    lm_statistic: bp.lm_statistic,
                    degrees_of_freedom: bp.degrees_of_freedom as u64,
                    p_value: bp.p_value,
                }),
                ..m.clone()
            });
            let cats = models::report_error_by_category(&model.predict(&test.x), &test.y)
                .into_iter()
                .map(|c| CategoryRow {
                    label: c.label.to_string(),
                    count: c.count as u64,
                    median_abs_error: c.median_abs_error,
                    iqr_abs_error: c.iqr_abs_error,
                })
                .collect();
            by_category.push((m.name.clone(), cats));
            loaded.push((m.name.clone(), model));
        }
        let global = loaded.iter().find(|(n, _)| n == "ridge").map(|(_, m)| m);
        if let Some((_, FittedModel::Stratified(p))) = loaded.iter().find(|(n, _)| n == "stratified") {
            let pred = predict_stratified(p, &test.x);
            let global_pred = global.map(|g| g.predict(&test.x));
            let mut strata = Vec::new();
            for route in [Route::A, Route::B] {
                let idx: Vec<usize> = (0..test.n()).filter(|&i| pred.routes[i] == route).collect();
                let train_rows = (0..train.n())
                    .filter(|&i| training_route(&train, i).is_ok_and(|r| r == route))
                    .count() as u64;
                let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
                let y = pick(&test.y);
                let metric = |p: &[f64]| (!idx.is_empty()).then(|| models::metrics(&pick(p), &y).into());
                strata.push(StratumRow {
                    stratum: route.label().into(),
                    train_rows,
                    test_rows: idx.len() as u64,
                    stratified: metric(&pred.predictions),
                    global: global_pred.as_deref().and_then(metric),
                });
            }
            stratified = Some(StratifiedSummary {
                routing: p.mode.name().into(),
                strata,
                routing_disagreement: routing_disagreement(p, &test),
            });
        }
        let summary = EvaluateSummary { models, error_by_category: by_category, stratified };
        let mut artifacts = vec![self.layout.evaluation(), self.layout.error_by_category()];
        self.write_evaluation(&summary).map_err(fail(ph))?;
        if summary.stratified.is_some() {
            artifacts.push(self.layout.stratified());
        }
        report.evaluate = Some(summary);
        Ok(artifacts)
    }

    fn write_evaluation(&self, s: &EvaluateSummary) -> Result<(), csv::Error> {
        let mut w = csv_writer(&self.layout.evaluation())?;
        w.write_record([
            "model", "family", "spec", "cv_r2", "train_r2", "train_rmse", "test_r2", "test_rmse", "test_mae", "bp_lm",
            "bp_p_value",
        ])?;
        for m in &s.models {
            let (tr, te) = (m.train.clone().unwrap_or_default(), m.test.clone().unwrap_or_default());
            let bp = m.breusch_pagan.clone().unwrap_or_default();
            w.write_record([
                m.name.clone(),
                m.family.clone(),
                m.spec.clone(),
                opt_str(m.cv_r2),
                opt_str(tr.r2),
                tr.rmse.to_string(),
                opt_str(te.r2),
                te.rmse.to_string(),
                te.mae.to_string(),
                bp.lm_statistic.to_string(),
                bp.p_value.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv_writer(&self.layout.error_by_category())?;
        w.write_record(["model", "category", "count", "median_abs_error", "iqr_abs_error"])?;
        for (model, rows) in &s.error_by_category {
            for r in rows {
                w.write_record([
                    model.clone(),
                    r.label.clone(),
                    r.count.to_string(),
                    opt_str(r.median_abs_error),
                    opt_str(r.iqr_abs_error),
                ])?;
            }
        }
        w.flush()?;

        if let Some(st) = &s.stratified {
            let mut w = csv_writer(&self.layout.stratified())?;
            w.write_record(["stratum", "train_rows", "test_rows", "r2", "rmse", "global_r2", "global_rmse"])?;
            for r in &st.strata {
                let (a, g) = (r.stratified.clone().unwrap_or_default(), r.global.clone().unwrap_or_default());
                w.write_record([
                    r.stratum.clone(),
                    r.train_rows.to_string(),
                    r.test_rows.to_string(),
                    opt_str(a.r2),
                    a.rmse.to_string(),
                    opt_str(g.r2),
                    g.rmse.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Ok(())
    }

    fn explain(&self, report: &mut RunReport) -> Result<Vec<PathBuf>, PipelineError> {
        let ph = Phase::Explain;
        let cfg = &self.config;
        let (data, split) = self.load_modeling_data(ph)?;
        let model = read_model_file(&self.layout.model(&cfg.shap_model)).map_err(fail(ph))?;
        let train = data.subset(&split.train);
        let background = explain::sample_background(&train.x, cfg.shap_background, derive_seed(cfg.seed, 1));
        let mut picked = sample_indices(split.test.len(), cfg.shap_rows, derive_seed(cfg.seed, 2));
        picked.iter_mut().for_each(|i| *i = split.test[*i]);
        let rows: Vec<Vec<f64>> = picked.iter().map(|&i| data.x[i].clone()).collect();
        let ids: Vec<String> = picked.iter().map(|&i| data.ids[i].clone()).collect();
        let config = ShapConfig::new(model.feature_names(), data.feature_names.clone(), background).map_err(fail(ph))?;
        let (explanations, summary) = explain::shap_summary(&model, &rows, &config, cfg.workers).map_err(fail(ph))?;
        explain::write_outputs(&self.layout.shap(), &ids, &data.feature_names, &explanations, &summary)
            .map_err(fail(ph))?;
        let gap = explanations.iter().map(|e| e.local_accuracy_gap().abs()).fold(0.0, f64::max);
        log::info!("[explain] {} rows; top feature {}", summary.rows, summary.ranking[0].feature);
        report.explain = Some(ExplainSummary {
            model: cfg.shap_model.clone(),
            rows: summary.rows as u64,
            background: config.background.len() as u64,
            ranking: summary
                .ranking
                .iter()
                .map(|f| ShapRow { feature: f.feature.clone(), mean_abs_phi: f.mean_abs_phi, direction: f.direction })
                .collect(),
            max_local_accuracy_gap: gap,
        });
        Ok(vec![self.layout.shap().join("summary.csv"), self.layout.shap().join("phi.csv")])
    }
}

/// `n` of `0..len` without replacement, ascending; all of them when `n >= len`.
fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut v = sample(&mut ChaCha8Rng::seed_from_u64(seed), len, n).into_vec();
    v.sort_unstable();
    v
}

fn get_summary(report: &RunReport, phase: Phase) -> Value {
    let v = match phase {
        Phase::Fetch => serde_json::to_value(&report.fetch),
        Phase::Index => serde_json::to_value(&report.index),
        Phase::Intersect => serde_json::to_value(&report.intersect),
        Phase::Extract => serde_json::to_value(&report.extract),
        Phase::Transform => serde_json::to_value(&report.transform),
        Phase::Eda => serde_json::to_value(&report.eda),
        Phase::Fit => serde_json::to_value(&report.fit),
        Phase::Evaluate => serde_json::to_value(&report.evaluate),
        Phase::Explain => serde_json::to_value(&report.explain),
    };
    v.expect("summaries serialize")
}

fn set_summary(report: &mut RunReport, phase: Phase, v: Value) -> Result<(), serde_json::Error> {
    match phase {
        Phase::Fetch => report.fetch = Some(serde_json::from_value(v)?),
        Phase::Index => report.index = Some(serde_json::from_value(v)?),
        Phase::Intersect => report.intersect = Some(serde_json::from_value(v)?),
        Phase::Extract => report.extract = Some(serde_json::from_value(v)?),
        Phase::Transform => report.transform = Some(serde_json::from_value(v)?),
        Phase::Eda => report.eda = Some(serde_json::from_value(v)?),
        Phase::Fit => report.fit = Some(serde_json::from_value(v)?),
        Phase::Evaluate => report.evaluate = Some(serde_json::from_value(v)?),
        Phase::Explain => report.explain = Some(serde_json::from_value(v)?),
    }
    Ok(())
}

fn write_audit(path: &Path, audit: &integrate::AuditReport) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "short_key\tfull_id\tpath\toffset")?;
    for f in &audit.findings {
        for (full, loc) in &f.locations {
            writeln!(w, "{}\t{full}\t{}\t{}", f.short_key, loc.path.display(), loc.offset)?;
        }
    }
    w.flush()
}

/// One line per dataset row: `row`, `id`, `set` (train/test), target `bin`.
fn write_split(path: &Path, data: &Dataset, split: &Split) -> std::io::Result<()> {
    let mut set = vec!["train"; data.n()];
    split.test.iter().for_each(|&i| set[i] = "test");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "row\tid\tset\tbin")?;
    for i in 0..data.n() {
        writeln!(w, "{i}\t{}\t{}\t{}", data.ids[i], set[i], split.bins[i])?;
    }
    w.flush()
}

fn read_split(path: &Path, data: &Dataset) -> Result<Split, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut split = Split { train: Vec::new(), test: Vec::new(), bins: Vec::new() };
    for (n, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(|e| e.to_string())?;
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || format!("{} line {}: malformed", path.display(), n + 1);
        if f.len() != 4 {
            return Err(bad());
        }
        let row: usize = f[0].parse().map_err(|_| bad())?;
        if row != split.bins.len() || data.ids.get(row).map(String::as_str) != Some(f[1]) {
            return Err(format!("{} does not match the dataset at row {row}", path.display()));
        }
        match f[2] {
            "train" => split.train.push(row),
            "test" => split.test.push(row),
            _ => return Err(bad()),
        }
        split.bins.push(f[3].parse().map_err(|_| bad())?);
    }
    if split.bins.len() != data.n() {
        return Err(format!("{} covers {} of {} rows", path.display(), split.bins.len(), data.n()));
    }
    Ok(split)
}

const STAT_COLUMNS: [&str; 9] = [
    "logP",
    "MolWt",
    "TPSA",
    "NumHDonors",
    "NumHAcceptors",
    "NumRotatableBonds",
    "NumAromaticRings",
    "FractionCSP3",
    "HeavyAtomCount",
];

fn stat_columns(rows: &[DescriptorRow]) -> Vec<Vec<f64>> {
    let col = |f: &dyn Fn(&DescriptorRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    vec![
        col(&|r| r.logp_target),
        col(&|r| r.molwt),
        col(&|r| r.tpsa),
        col(&|r| r.num_h_donors as f64),
        col(&|r| r.num_h_acceptors as f64),
        col(&|r| r.num_rotatable_bonds as f64),
        col(&|r| r.num_aromatic_rings as f64),
        col(&|r| r.fraction_csp3),
        col(&|r| r.heavy_atom_count as f64),
    ]
}

/// Lipinski pass counts per criterion over the dataset rows.
pub fn lipinski_summary(rows: &[DescriptorRow]) -> LipinskiSummary {
    let mut s = LipinskiSummary { n: rows.len() as u64, ..Default::default() };
    for r in rows {
        let v = lipinski_check(r.molwt, r.logp_target, r.num_h_donors as f64, r.num_h_acceptors as f64);
        s.passes_molwt += v.passes_molwt as u64;
        s.passes_logp += v.passes_logp as u64;
        s.passes_donors += v.passes_donors as u64;
        s.passes_acceptors += v.passes_acceptors as u64;
        s.compliant += v.compliant as u64;
    }
    s
}

pub fn eda_summary(rows: &[DescriptorRow], normality_subsample: usize, seed: u64) -> Result<EdaSummary, stats::StatsError> {
    let cols = stat_columns(rows);
    let mut columns = Vec::new();
    for (name, c) in STAT_COLUMNS.iter().zip(&cols) {
        let s = stats::summarize(c)?;
        columns.push(ColumnStats {
            name: name.to_string(),
            mean: s.mean,
            median: s.median,
            std_dev: s.std_dev,
            min: s.min,
            max: s.max,
            iqr: s.iqr,
            skewness: s.skewness,
            excess_kurtosis: s.excess_kurtosis,
        });
    }
    let corr = stats::pearson_matrix(&cols)?;
    let target_correlations = (1..cols.len())
        .map(|j| Correlation { feature: STAT_COLUMNS[j].into(), r: corr.r[0][j], p_value: corr.p_values[0][j] })
        .collect();
    let features = &cols[1..8];
    let vif = stats::vif(features)?
        .into_iter()
        .zip(models::MODEL_FEATURES)
        .map(|(v, f)| VifRow { feature: f.into(), vif: v.is_finite().then_some(v) })
        .collect();
    let outliers = stats::iqr_outliers(&cols[0])?;
    let normality = stats::normality_test(&cols[0], normality_subsample, seed)?;
    let pca = stats::pca(features, features.len())?;
    Ok(EdaSummary {
        rows: rows.len() as u64,
        columns,
        target_correlations,
        vif,
        target_outliers: outliers.indices.len() as u64,
        outlier_bounds: (outliers.lower, outliers.upper),
        normality_statistic: normality.statistic,
        normality_p_value: normality.p_value,
        normality_n: normality.n as u64,
        lipinski: lipinski_summary(rows),
        pca_explained: pca.explained_variance_ratio,
    })
}

/// Runs every phase in order, honoring `resume`, then writes the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let pipeline = Pipeline::new(config.clone())?;
    let mut report = RunReport { seed: config.seed, ..Default::default() };
    let mut rerun = false;
    for phase in Phase::ALL {
        if phase == Phase::Fetch && config.manifest.is_none() {
            continue;
        }
        if phase == Phase::Index {
            config.validate(true)?;
        }
        if config.resume && !rerun && pipeline.try_resume(phase, &mut report) {
            log::info!("[{}] up to date; skipped", phase.name());
            report.phases.push(PhaseTiming { phase: phase.name().into(), seconds: 0.0, skipped: true });
            continue;
        }
        rerun = true;
        let start = Instant::now();
        log::info!("[{}] starting", phase.name());
        pipeline.run_phase(phase, &mut report)?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("[{}] done in {seconds:.2} s", phase.name());
        report.phases.push(PhaseTiming { phase: phase.name().into(), seconds, skipped: false });
    }
    for v in report.conservation_violations() {
        log::warn!("[report] {v}");
    }
    generate_report(&report, &config.out).map_err(|e| PipelineError::Phase { phase: "report", message: e.to_string() })?;
    Ok(report)
}
