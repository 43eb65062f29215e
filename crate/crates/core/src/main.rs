use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdforge::integrate;
use sdforge::models::RoutingMode;
use sdforge::pipeline::{
    generate_report, render_text, run_pipeline, ConfigError, Phase, Pipeline, PipelineConfig, PipelineError, RunReport,
};
use sdforge::synth::{generate_synthetic_corpus, CorpusSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_PHASE: u8 = 3;

#[derive(Parser)]
#[command(name = "sdforge", version, about = "Indexed SDF integration, descriptors and logP modeling")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Skip phases whose recorded outputs are still present.
    #[arg(long, global = true)]
    resume: bool,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Download the manifest's files with resume and checksum verification.
    Fetch,
    /// Build the byte-offset index of the primary source.
    Index,
    /// Intersect identifiers across sources and audit short-key collisions.
    Intersect,
    /// Report short keys shared by distinct full identifiers.
    Audit,
    /// Copy the intersected records out of the primary source via the index.
    Extract,
    /// Compute descriptors for the extracted records.
    Transform,
    /// Descriptive statistics, correlations, VIF, normality, Lipinski, PCA.
    Eda,
    /// Split the dataset and fit models.
    Fit {
        /// Model to fit; repeatable. Defaults to the configured list.
        #[arg(long = "model", value_parser = ["ridge", "lasso", "enet", "rf", "gbm", "stratified"])]
        models: Vec<String>,
        /// Cross-validation folds.
        #[arg(long)]
        cv: Option<usize>,
        /// Routing of unseen rows in the stratified model.
        #[arg(long, value_parser = ["provisional", "feature"])]
        routing: Option<String>,
    },
    /// Metrics, Breusch-Pagan, error by category and the stratified table.
    Evaluate,
    /// Exact Shapley values for a fitted model.
    Explain {
        #[arg(long)]
        model: Option<String>,
        /// Background rows drawn from the training set.
        #[arg(long)]
        n_background: Option<usize>,
        /// Test rows to explain.
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Every phase in order, then the report.
    Run,
    /// Write a synthetic multi-source corpus, its manifest and a pipeline.conf.
    GenCorpus {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        sources: usize,
        #[arg(long, default_value_t = 5000)]
        records: usize,
        #[arg(long, default_value_t = 2)]
        files: usize,
        #[arg(long, default_value_t = 1200)]
        core: usize,
        #[arg(long, default_value_t = 3)]
        collisions: usize,
        #[arg(long, default_value_t = 0.02)]
        missing_target: f64,
    },
    /// Render report.txt and summary.json from recorded phase states.
    Report,
}

enum Failure {
    Config(String),
    Phase(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Phase(other.to_string()),
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    cfg.resume |= g.resume;
    Ok(cfg)
}

fn phase_only(cfg: PipelineConfig, phase: Phase) -> Result<(), Failure> {
    if matches!(phase, Phase::Index | Phase::Intersect) {
        cfg.validate(true)?;
    }
    let pipeline = Pipeline::new(cfg)?;
    let mut report = RunReport { seed: pipeline.config.seed, ..Default::default() };
    if pipeline.config.resume && pipeline.try_resume(phase, &mut report) {
        log::info!("[{}] up to date; skipped", phase.name());
        return Ok(());
    }
    pipeline.run_phase(phase, &mut report)?;
    log::info!("[{}] done; outputs in {}", phase.name(), pipeline.layout.out.display());
    Ok(())
}

fn audit(cfg: PipelineConfig) -> Result<(), Failure> {
    cfg.validate(true)?;
    let paths: Vec<PathBuf> = cfg.sources.iter().flat_map(|s| s.paths.iter().cloned()).collect();
    let report = integrate::audit_collisions(&paths, &cfg.short_tag, &cfg.key_tag)
        .map_err(|e| Failure::Phase(format!("phase audit: {e}")))?;
    log::info!("[audit] {} records scanned, {} collision groups", report.scanned, report.findings.len());
    for f in &report.findings {
        println!("{}\t{}", f.short_key, f.distinct_full_ids.join("\t"));
    }
    Ok(())
}

fn gen_corpus(cfg: PipelineConfig, spec: CorpusSpec, dir: &Path, out_given: bool) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Phase(format!("gen-corpus: {e}"));
    std::fs::create_dir_all(dir).map_err(io)?;
    let dir = dir.canonicalize().map_err(io)?;
    let manifest = generate_synthetic_corpus(&spec, &dir).map_err(|e| Failure::Phase(format!("gen-corpus: {e}")))?;
    let mut run_cfg = PipelineConfig::for_corpus(&manifest);
    run_cfg.seed = cfg.seed;
    run_cfg.workers = cfg.workers;
    run_cfg.out = if out_given { cfg.out } else { dir.join("out") };
    let conf = dir.join("pipeline.conf");
    std::fs::write(&conf, run_cfg.to_text()).map_err(io)?;
    log::info!(
        "[gen-corpus] {} records in {} files; core {}; config {}",
        manifest.records.len(),
        manifest.all_files().len(),
        manifest.core.len(),
        conf.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Fetch => phase_only(cfg, Phase::Fetch),
        Command::Index => phase_only(cfg, Phase::Index),
        Command::Intersect => phase_only(cfg, Phase::Intersect),
        Command::Audit => audit(cfg),
        Command::Extract => phase_only(cfg, Phase::Extract),
        Command::Transform => phase_only(cfg, Phase::Transform),
        Command::Eda => phase_only(cfg, Phase::Eda),
        Command::Fit { models, cv, routing } => {
            let mut cfg = cfg;
            if !models.is_empty() {
                cfg.models = models;
                if !cfg.models.contains(&cfg.shap_model) {
                    cfg.shap_model = cfg.models.iter().find(|m| *m != "stratified").cloned().unwrap_or_default();
                }
            }
            if let Some(k) = cv {
                cfg.cv_folds = k;
            }
            if let Some(r) = routing {
                cfg.routing = RoutingMode::from_name(&r).expect("clap restricts values");
            }
            phase_only(cfg, Phase::Fit)
        }
        Command::Evaluate => phase_only(cfg, Phase::Evaluate),
        Command::Explain { model, n_background, rows } => {
            let mut cfg = cfg;
            if let Some(m) = model {
                cfg.shap_model = m;
            }
            if let Some(n) = n_background {
                cfg.shap_background = n;
            }
            if let Some(n) = rows {
                cfg.shap_rows = n;
            }
            phase_only(cfg, Phase::Explain)
        }
        Command::Run => {
            let report = run_pipeline(&cfg)?;
            print!("{}", render_text(&report));
            Ok(())
        }
        Command::GenCorpus { dir, sources, records, files, core, collisions, missing_target } => {
            let spec = CorpusSpec {
                sources,
                records_per_source: records,
                files_per_source: files,
                core,
                collisions,
                missing_target,
                seed: cfg.seed,
                ..Default::default()
            };
            let out_given = cli.global.out.is_some();
            gen_corpus(cfg, spec, &dir, out_given)
        }
        Command::Report => {
            let pipeline = Pipeline::new(cfg)?;
            let report = pipeline.recorded_report();
            generate_report(&report, &pipeline.layout.out).map_err(|e| Failure::Phase(format!("report: {e}")))?;
            print!("{}", render_text(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            log::error!("[config] {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Phase(m)) => {
            log::error!("{m}");
            ExitCode::from(EXIT_PHASE)
        }
    }
}
