//! Flat `key = value` pipeline configuration.
//!
//! ```text
//! # comment
//! source.pubchem = data/pubchem_0.sdf, data/pubchem_1.sdf
//! source.chembl  = data/chembl.sdf
//! primary = pubchem
//! seed = 7
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use crate::models::RoutingMode;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceDef {
    pub name: String,
    pub paths: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub sources: Vec<SourceDef>,
    /// Source whose records are indexed, extracted and modeled.
    pub primary: Option<String>,
    pub key_tag: String,
    pub short_tag: String,
    pub target_tag: String,
    pub smiles_tag: Option<String>,
    pub min_sources: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub fetch_dir: Option<PathBuf>,
    pub fetch_retries: u32,
    pub verify: bool,
    pub test_fraction: f64,
    pub split_bins: usize,
    pub models: Vec<String>,
    pub cv_folds: usize,
    pub routing: RoutingMode,
    pub stratified_lambda: f64,
    pub min_stratum: usize,
    pub shap_model: String,
    pub shap_background: usize,
    pub shap_rows: usize,
    pub normality_subsample: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub resume: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            primary: None,
            key_tag: "PUBCHEM_IUPAC_INCHI".into(),
            short_tag: "PUBCHEM_IUPAC_INCHIKEY".into(),
            target_tag: "PUBCHEM_XLOGP3".into(),
            smiles_tag: None,
            min_sources: None,
            manifest: None,
            fetch_dir: None,
            fetch_retries: 5,
            verify: true,
            test_fraction: 0.2,
            split_bins: 10,
            models: ["ridge", "lasso", "enet", "rf", "gbm", "stratified"].map(String::from).to_vec(),
            cv_folds: 5,
            routing: RoutingMode::ProvisionalLogp,
            stratified_lambda: 1e-3,
            min_stratum: 50,
            shap_model: "rf".into(),
            shap_background: 100,
            shap_rows: 200,
            normality_subsample: 5000,
            seed: 0,
            workers: 4,
            out: PathBuf::from("sdforge-out"),
            resume: false,
        }
    }
}

pub const MODEL_CHOICES: [&str; 6] = ["ridge", "lasso", "enet", "rf", "gbm", "stratified"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("config key {key:?}: {reason}")]
    Value { key: String, reason: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value { key: key.into(), reason: format!("cannot parse {value:?}") })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value { key: key.into(), reason: format!("expected true/false, got {value:?}") }),
    }
}

fn split_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Applies one key. `base` anchors relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let opt = |v: &str| (!v.is_empty() && v != "-").then(|| v.to_string());
        if let Some(name) = key.strip_prefix("source.") {
            if name.is_empty() {
                return Err(ConfigError::Value { key: key.into(), reason: "empty source name".into() });
            }
            let paths: Vec<PathBuf> = split_list(value).iter().map(|p| resolve(base, p)).collect();
            if paths.is_empty() {
                return Err(ConfigError::Value { key: key.into(), reason: "no paths".into() });
            }
            match self.sources.iter_mut().find(|s| s.name == name) {
                Some(s) => s.paths = paths,
                None => self.sources.push(SourceDef { name: name.into(), paths }),
            }
            return Ok(());
        }
        match key {
            "primary" => self.primary = opt(value),
            "key_tag" => self.key_tag = value.into(),
            "short_tag" => self.short_tag = value.into(),
            "target_tag" => self.target_tag = value.into(),
            "smiles_tag" => self.smiles_tag = opt(value),
            "min_sources" => {
                self.min_sources = if value == "all" { None } else { Some(parse_num(key, value)?) }
            }
            "manifest" => self.manifest = opt(value).map(|v| resolve(base, &v)),
            "fetch_dir" => self.fetch_dir = opt(value).map(|v| resolve(base, &v)),
            "fetch_retries" => self.fetch_retries = parse_num(key, value)?,
            "verify" => self.verify = parse_bool(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "split_bins" => self.split_bins = parse_num(key, value)?,
            "models" => self.models = split_list(value),
            "cv_folds" => self.cv_folds = parse_num(key, value)?,
            "routing" => {
                self.routing = RoutingMode::from_name(value).ok_or_else(|| ConfigError::Value {
                    key: key.into(),
                    reason: "expected provisional or feature".into(),
                })?
            }
            "stratified_lambda" => self.stratified_lambda = parse_num(key, value)?,
            "min_stratum" => self.min_stratum = parse_num(key, value)?,
            "shap_model" => self.shap_model = value.into(),
            "shap_background" => self.shap_background = parse_num(key, value)?,
            "shap_rows" => self.shap_rows = parse_num(key, value)?,
            "normality_subsample" => self.normality_subsample = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "out" => self.out = resolve(base, value),
            "resume" => self.resume = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, reason: "expected key = value".into() })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, reason: "empty key".into() });
            }
            cfg.set(key, value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Config for a generated corpus: one source per generated source.
    pub fn for_corpus(manifest: &crate::synth::CorpusManifest) -> Self {
        let sources = manifest
            .files
            .iter()
            .enumerate()
            .map(|(i, paths)| SourceDef { name: format!("source{i}"), paths: paths.clone() })
            .collect();
        Self { sources, primary: Some("source0".into()), ..Self::default() }
    }

    /// Renders every key; `parse` of the result gives back `self`.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let mut out = String::new();
        for s in &self.sources {
            let paths: Vec<String> = s.paths.iter().map(|p| p.display().to_string()).collect();
            out += &format!("source.{} = {}\n", s.name, paths.join(", "));
        }
        let keys: [(&str, String); 25] = [
            ("primary", self.primary.clone().unwrap_or("-".into())),
            ("key_tag", self.key_tag.clone()),
            ("short_tag", self.short_tag.clone()),
            ("target_tag", self.target_tag.clone()),
            ("smiles_tag", self.smiles_tag.clone().unwrap_or("-".into())),
            ("min_sources", self.min_sources.map_or("all".into(), |k| k.to_string())),
            ("manifest", path(&self.manifest)),
            ("fetch_dir", path(&self.fetch_dir)),
            ("fetch_retries", self.fetch_retries.to_string()),
            ("verify", self.verify.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("split_bins", self.split_bins.to_string()),
            ("models", self.models.join(", ")),
            ("cv_folds", self.cv_folds.to_string()),
            ("routing", self.routing.name().into()),
            ("stratified_lambda", self.stratified_lambda.to_string()),
            ("min_stratum", self.min_stratum.to_string()),
            ("shap_model", self.shap_model.clone()),
            ("shap_background", self.shap_background.to_string()),
            ("shap_rows", self.shap_rows.to_string()),
            ("normality_subsample", self.normality_subsample.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("out", self.out.display().to_string()),
            ("resume", self.resume.to_string()),
        ];
        for (k, v) in keys {
            out += &format!("{k} = {v}\n");
        }
        out
    }

    pub fn primary_source(&self) -> Option<&SourceDef> {
        match &self.primary {
            Some(name) => self.sources.iter().find(|s| &s.name == name),
            None => self.sources.first(),
        }
    }

    /// Structural checks; `check_paths` also requires source files to exist.
    pub fn validate(&self, check_paths: bool) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sources.len() < 2 {
            return bad(format!("need at least 2 sources, got {}", self.sources.len()));
        }
        if self.primary_source().is_none() {
            return bad(format!("primary source {:?} is not defined", self.primary.as_deref().unwrap_or("")));
        }
        if let Some(k) = self.min_sources {
            if k == 0 || k > self.sources.len() {
                return bad(format!("min_sources must be in 1..={}", self.sources.len()));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.split_bins == 0 || self.cv_folds < 2 || self.workers == 0 || self.shap_background == 0 {
            return bad("split_bins, workers and shap_background must be positive; cv_folds at least 2".into());
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        if let Some(m) = self.models.iter().find(|m| !MODEL_CHOICES.contains(&m.as_str())) {
            return bad(format!("unknown model {m:?}; choose from {}", MODEL_CHOICES.join(", ")));
        }
        if !self.models.contains(&self.shap_model) || self.shap_model == "stratified" {
            return bad(format!("shap_model {:?} must be one of the configured non-stratified models", self.shap_model));
        }
        if self.manifest.is_some() && self.fetch_dir.is_none() {
            return bad("manifest requires fetch_dir".into());
        }
        if check_paths {
            for s in &self.sources {
                if let Some(p) = s.paths.iter().find(|p| !p.is_file()) {
                    return bad(format!("source {}: {} does not exist", s.name, p.display()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_sources() {
        let text = "# demo\nsource.a = x.sdf, y.sdf\nsource.b=/abs/z.sdf\nprimary = b\nseed = 42\nmodels = ridge, rf\nshap_model = rf\nmin_sources = 2\nrouting = feature\n";
        let cfg = PipelineConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.sources.len(), 2);
        assert_eq!(cfg.sources[0].paths, [PathBuf::from("/base/x.sdf"), PathBuf::from("/base/y.sdf")]);
        assert_eq!(cfg.sources[1].paths, [PathBuf::from("/abs/z.sdf")]);
        assert_eq!(cfg.primary_source().unwrap().name, "b");
        assert_eq!((cfg.seed, cfg.min_sources), (42, Some(2)));
        assert_eq!(cfg.models, ["ridge", "rf"]);
        assert_eq!(cfg.routing, RoutingMode::FeatureOnly);
        cfg.validate(false).unwrap();
        assert!(cfg.validate(true).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(matches!(PipelineConfig::parse("seed 4", base), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("colour = red", base), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(PipelineConfig::parse("seed = x", base), Err(ConfigError::Value { .. })));
        let one = PipelineConfig::parse("source.a = x", base).unwrap();
        assert!(one.validate(false).is_err());
        let bad_model = PipelineConfig::parse("source.a = x\nsource.b = y\nmodels = ridge, svm", base).unwrap();
        assert!(bad_model.validate(false).is_err());
        let shap = PipelineConfig::parse("source.a = x\nsource.b = y\nmodels = ridge", base).unwrap();
        assert!(shap.validate(false).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::parse("source.a = /x.sdf, /y.sdf\nsource.b = /z.sdf", Path::new("/")).unwrap();
        cfg.min_sources = Some(2);
        cfg.smiles_tag = Some("SMILES".into());
        cfg.test_fraction = 0.25;
        cfg.routing = RoutingMode::FeatureOnly;
        cfg.out = PathBuf::from("/tmp/out");
        assert_eq!(PipelineConfig::parse(&cfg.to_text(), Path::new("/elsewhere")).unwrap(), cfg);
        let d = PipelineConfig { out: PathBuf::from("/o"), ..Default::default() };
        assert_eq!(PipelineConfig::parse(&d.to_text(), Path::new("/")).unwrap(), d);
    }
}
