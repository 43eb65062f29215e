//! Run report: counts, timings, metrics and diagnostics, rendered as text
//! and as a JSON summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceCount {
    pub name: String,
    pub scanned: u64,
    pub identifiers: u64,
    pub missing_key: u64,
    pub malformed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchSummary {
    pub entries: usize,
    pub ok: usize,
    pub failed: usize,
    pub resumed: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub files: usize,
    pub bytes_read: u64,
    pub indexed: u64,
    pub skipped: u64,
    pub malformed: u64,
    pub duplicates: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntersectSummary {
    pub primary: String,
    pub sources: Vec<SourceCount>,
    pub min_sources: usize,
    pub intersected: u64,
    /// Same intersection computed on the short key.
    pub intersected_short: u64,
    pub collision_groups: u64,
    pub audit_missing_short: u64,
    pub audit_missing_full: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub targets: u64,
    pub extracted: u64,
    pub not_in_index: u64,
    pub verification_failures: u64,
    pub bytes_written: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformSummary {
    pub records: u64,
    pub rows: u64,
    pub excluded: u64,
    pub exclusion_reasons: Vec<(String, u64)>,
    pub warnings: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub feature: String,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VifRow {
    pub feature: String,
    /// `None` for exact collinearity.
    pub vif: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipinskiSummary {
    pub n: u64,
    pub passes_molwt: u64,
    pub passes_logp: u64,
    pub passes_donors: u64,
    pub passes_acceptors: u64,
    pub compliant: u64,
}

impl LipinskiSummary {
    pub fn rate(&self, count: u64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.n as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EdaSummary {
    pub rows: u64,
    pub columns: Vec<ColumnStats>,
    pub target_correlations: Vec<Correlation>,
    pub vif: Vec<VifRow>,
    pub target_outliers: u64,
    pub outlier_bounds: (f64, f64),
    pub normality_statistic: f64,
    pub normality_p_value: f64,
    pub normality_n: u64,
    pub lipinski: LipinskiSummary,
    pub pca_explained: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub n: u64,
}

impl From<crate::models::Metrics> for MetricSet {
    fn from(m: crate::models::Metrics) -> Self {
        Self { r2: m.r2, rmse: m.rmse, mae: m.mae, n: m.n as u64 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BpSummary {
    pub lm_statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub family: String,
    pub spec: String,
    pub cv_r2: Option<f64>,
    pub train: Option<MetricSet>,
    pub test: Option<MetricSet>,
    /// Breusch-Pagan on training residuals against the features.
    pub breusch_pagan: Option<BpSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub train: u64,
    pub test: u64,
    pub models: Vec<ModelSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub label: String,
    pub count: u64,
    pub median_abs_error: Option<f64>,
    pub iqr_abs_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub stratum: String,
    pub train_rows: u64,
    pub test_rows: u64,
    pub stratified: Option<MetricSet>,
    /// Global ridge on the same test rows.
    pub global: Option<MetricSet>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSummary {
    pub routing: String,
    pub strata: Vec<StratumRow>,
    pub routing_disagreement: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub models: Vec<ModelSummary>,
    pub error_by_category: Vec<(String, Vec<CategoryRow>)>,
    pub stratified: Option<StratifiedSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub direction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub model: String,
    pub rows: u64,
    pub background: u64,
    pub ranking: Vec<ShapRow>,
    pub max_local_accuracy_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub phases: Vec<PhaseTiming>,
    pub fetch: Option<FetchSummary>,
    pub index: Option<IndexSummary>,
    pub intersect: Option<IntersectSummary>,
    pub extract: Option<ExtractSummary>,
    pub transform: Option<TransformSummary>,
    pub eda: Option<EdaSummary>,
    pub fit: Option<FitSummary>,
    pub evaluate: Option<EvaluateSummary>,
    pub explain: Option<ExplainSummary>,
}

impl RunReport {
    /// Count mismatches between adjacent phases; empty when consistent.
    pub fn conservation_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        if let Some(i) = &self.intersect {
            for s in &i.sources {
                check(
                    s.identifiers + s.missing_key <= s.scanned,
                    format!("source {}: {} ids + {} missing > {} scanned", s.name, s.identifiers, s.missing_key, s.scanned),
                );
            }
            let smallest = i.sources.iter().map(|s| s.identifiers).min().unwrap_or(0);
            check(i.intersected <= smallest, format!("intersected {} exceeds smallest source {smallest}", i.intersected));
        }
        if let (Some(ix), Some(s)) = (&self.index, self.primary_scanned()) {
            let total = ix.indexed + ix.skipped + ix.malformed + ix.duplicates;
            check(total == s, format!("index accounts for {total} records, primary source scanned {s}"));
        }
        if let (Some(i), Some(e)) = (&self.intersect, &self.extract) {
            check(e.targets == i.intersected, format!("extraction targets {} != intersected {}", e.targets, i.intersected));
            check(
                e.extracted + e.not_in_index + e.verification_failures == e.targets,
                format!(
                    "extracted {} + not indexed {} + failed {} != targets {}",
                    e.extracted, e.not_in_index, e.verification_failures, e.targets
                ),
            );
        }
        if let (Some(e), Some(t)) = (&self.extract, &self.transform) {
            check(t.records == e.extracted, format!("transform read {} records, extracted {}", t.records, e.extracted));
        }
        if let Some(t) = &self.transform {
            check(t.rows + t.excluded == t.records, format!("rows {} + excluded {} != records {}", t.rows, t.excluded, t.records));
        }
        if let (Some(t), Some(f)) = (&self.transform, &self.fit) {
            check(f.train + f.test == t.rows, format!("train {} + test {} != rows {}", f.train, f.test, t.rows));
        }
        if let (Some(t), Some(e)) = (&self.transform, &self.eda) {
            check(e.rows == t.rows, format!("eda saw {} rows, transform wrote {}", e.rows, t.rows));
        }
        v
    }

    /// Blocks seen in the primary source (parsed plus malformed), when the
    /// intersect phase ran.
    pub fn primary_scanned(&self) -> Option<u64> {
        let i = self.intersect.as_ref()?;
        i.sources.iter().find(|s| s.name == i.primary).map(|s| s.scanned + s.malformed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}


fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"))
}

fn heading(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n{title}\n{}", "-".repeat(title.len()));
}

fn render_models(out: &mut String, models: &[ModelSummary]) {
    let _ = writeln!(
        out,
        "{:<22} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}  spec",
        "model", "cv_r2", "train_r2", "test_r2", "rmse", "mae", "bp_p"
    );
    for m in models {
        let test = m.test.as_ref();
        let _ = writeln!(
            out,
            "{:<22} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}  {}",
            m.name,
            opt(m.cv_r2, 4),
            opt(m.train.as_ref().and_then(|t| t.r2), 4),
            opt(test.and_then(|t| t.r2), 4),
            opt(test.map(|t| t.rmse), 4),
            opt(test.map(|t| t.mae), 4),
            m.breusch_pagan.as_ref().map_or("n/a".into(), |b| format!("{:.2e}", b.p_value)),
            m.spec
        );
    }
}

/// Human-readable report with one section per executed phase.
pub fn render_text(run: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sdforge run report\n==================\nseed: {}", run.seed);

    heading(&mut out, "Phases");
    for p in &run.phases {
        let state = if p.skipped { "skipped (resume)" } else { "ran" };
        let _ = writeln!(out, "{:<10} {:>10.3} s  {state}", p.phase, p.seconds);
    }

    if let Some(f) = &run.fetch {
        heading(&mut out, "Acquisition");
        let _ = writeln!(
            out,
            "entries {}  ok {}  failed {}  resumed {}  already present {}",
            f.entries, f.ok, f.failed, f.resumed, f.skipped
        );
    }
    if let Some(i) = &run.index {
        heading(&mut out, "Index");
        let _ = writeln!(
            out,
            "files {}  bytes read {}  indexed {}  skipped (no key) {}  malformed {}  duplicates {}",
            i.files, i.bytes_read, i.indexed, i.skipped, i.malformed, i.duplicates
        );
    }
    if let Some(i) = &run.intersect {
        heading(&mut out, "Integration");
        let _ = writeln!(out, "{:<16} {:>10} {:>12} {:>12}", "source", "scanned", "identifiers", "missing key");
        for s in &i.sources {
            let mark = if s.name == i.primary { " (primary)" } else { "" };
            let _ = writeln!(out, "{:<16} {:>10} {:>12} {:>12}{mark}", s.name, s.scanned, s.identifiers, s.missing_key);
        }
        let _ = writeln!(out, "present in >= {} sources (full identifier): {}", i.min_sources, i.intersected);
        let _ = writeln!(out, "present in >= {} sources (short key): {}", i.min_sources, i.intersected_short);
        let _ = writeln!(out, "short-key collision groups: {}", i.collision_groups);
    }
    if let Some(e) = &run.extract {
        heading(&mut out, "Extraction");
        let _ = writeln!(
            out,
            "targets {}  extracted {}  not in index {}  verification failures {}  bytes {}",
            e.targets, e.extracted, e.not_in_index, e.verification_failures, e.bytes_written
        );
    }
    if let Some(t) = &run.transform {
        heading(&mut out, "Descriptor transform");
        let _ = writeln!(out, "records {}  rows {}  excluded {}  warnings {}", t.records, t.rows, t.excluded, t.warnings);
        for (reason, n) in &t.exclusion_reasons {
            let _ = writeln!(out, "  excluded: {reason}: {n}");
        }
    }
    if let Some(e) = &run.eda {
        heading(&mut out, "Descriptive statistics");
        let _ = writeln!(
            out,
            "{:<18} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}",
            "column", "mean", "median", "std", "min", "max", "iqr", "skew", "kurt"
        );
        for c in &e.columns {
            let _ = writeln!(
                out,
                "{:<18} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8.3} {:>8.3}",
                c.name, c.mean, c.median, c.std_dev, c.min, c.max, c.iqr, c.skewness, c.excess_kurtosis
            );
        }
        let _ = writeln!(
            out,
            "target outliers (1.5 IQR): {} outside [{:.3}, {:.3}]",
            e.target_outliers, e.outlier_bounds.0, e.outlier_bounds.1
        );
        let _ = writeln!(
            out,
            "target normality (K^2, n={}): statistic {:.3}, p {:.3e}",
            e.normality_n, e.normality_statistic, e.normality_p_value
        );

        heading(&mut out, "Correlation with target and collinearity");
        let _ = writeln!(out, "{:<18} {:>9} {:>10} {:>9}", "feature", "r", "p", "vif");
        for c in &e.target_correlations {
            let vif = e.vif.iter().find(|v| v.feature == c.feature).map_or("n/a".to_string(), |v| {
                v.vif.map_or("inf".to_string(), |x| format!("{x:.2}"))
            });
            let p = c.p_value.map_or("n/a".to_string(), |p| format!("{p:.2e}"));
            let _ = writeln!(out, "{:<18} {:>9} {:>10} {:>9}", c.feature, opt(c.r, 4), p, vif);
        }

        heading(&mut out, "Lipinski compliance");
        let l = &e.lipinski;
        for (name, count) in [
            ("MolWt <= 500", l.passes_molwt),
            ("logP <= 5", l.passes_logp),
            ("HBD <= 5", l.passes_donors),
            ("HBA <= 10", l.passes_acceptors),
            ("all four", l.compliant),
        ] {
            let _ = writeln!(out, "{name:<14} {count:>8} / {:<8} {:>7.2}%", l.n, l.rate(count));
        }
        let ratios: Vec<String> = e.pca_explained.iter().map(|r| format!("{:.3}", r)).collect();
        let _ = writeln!(out, "PCA explained variance ratios: {}", ratios.join(" "));
    }
    if let Some(f) = &run.fit {
        heading(&mut out, "Model fitting");
        let _ = writeln!(out, "train rows {}  test rows {}", f.train, f.test);
    }
    if let Some(ev) = &run.evaluate {
        heading(&mut out, "Model comparison (test set)");
        render_models(&mut out, &ev.models);
        if let Some(s) = &ev.stratified {
            heading(&mut out, "Stratified models");
            let _ = writeln!(out, "routing: {}  disagreement with true-logP routing: {:.4}", s.routing, s.routing_disagreement);
            let _ = writeln!(
                out,
                "{:<8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10}",
                "stratum", "train", "test", "strat_r2", "strat_rmse", "global_r2", "global_rmse"
            );
            for r in &s.strata {
                let st = r.stratified.as_ref();
                let gl = r.global.as_ref();
                let _ = writeln!(
                    out,
                    "{:<8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10}",
                    r.stratum,
                    r.train_rows,
                    r.test_rows,
                    opt(st.and_then(|m| m.r2), 4),
                    opt(st.map(|m| m.rmse), 4),
                    opt(gl.and_then(|m| m.r2), 4),
                    opt(gl.map(|m| m.rmse), 4)
                );
            }
        }
        for (model, rows) in &ev.error_by_category {
            heading(&mut out, &format!("Absolute error by logP category ({model})"));
            let _ = writeln!(out, "{:<22} {:>7} {:>12} {:>10}", "category", "n", "median_abs", "iqr_abs");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<22} {:>7} {:>12} {:>10}",
                    r.label,
                    r.count,
                    opt(r.median_abs_error, 4),
                    opt(r.iqr_abs_error, 4)
                );
            }
        }
    }
    if let Some(x) = &run.explain {
        heading(&mut out, &format!("Shapley importance ({})", x.model));
        let _ = writeln!(out, "rows {}  background {}  max |local accuracy gap| {:.2e}", x.rows, x.background, x.max_local_accuracy_gap);
        let _ = writeln!(out, "{:<5} {:<18} {:>12} {:>10}", "rank", "feature", "mean|phi|", "direction");
        for (k, r) in x.ranking.iter().enumerate() {
            let _ = writeln!(out, "{:<5} {:<18} {:>12.4} {:>10}", k + 1, r.feature, r.mean_abs_phi, opt(r.direction, 3));
        }
    }

    heading(&mut out, "Count conservation");
    let violations = run.conservation_violations();
    if violations.is_empty() {
        let _ = writeln!(out, "all phase boundaries consistent");
    } else {
        for v in violations {
            let _ = writeln!(out, "VIOLATION: {v}");
        }
    }
    out
}

/// Writes `report.txt` and `summary.json` into `dir`.
pub fn generate_report(run: &RunReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), render_text(run))?;
    std::fs::write(dir.join("summary.json"), run.to_json())
}
