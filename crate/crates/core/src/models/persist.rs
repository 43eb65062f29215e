//! Text model files.
//!
//! ```text
//! #sdforge-model v1
//! kind <linear|ensemble|stratified>
//! features <name>\t<name>...
//! ```
//!
//! followed by one body section. Every line is `key\tvalue...`; reals use the
//! shortest representation that round-trips.
//!
//! ```text
//! [linear]
//! penalty <ridge|lasso|elasticnet>
//! lambda <f64>
//! l1_ratio <f64>
//! intercept <f64>                 standardized space
//! coef <f64>...                   one per feature
//! mean <f64>...                   scaler
//! std <f64>...
//! transform <lambda> <loglik>     optional Yeo-Johnson
//! variance <intercept> <slope>    optional WLS variance model
//! [/linear]
//!
//! [ensemble]
//! kind <random_forest|gradient_boosting>
//! init <f64>
//! learning_rate <f64>
//! max_depth <usize|none>
//! min_samples_leaf <usize>
//! max_features <usize|none>
//! subsample <f64>
//! seed <u64>
//! trees <count>
//! tree <node count>               then one line per node, in index order:
//! S <feature> <threshold> <left> <right>
//! L <value>
//! [/ensemble]
//!
//! [stratified]
//! mode <feature|provisional>
//! model a | model b | model global   each followed by a [linear] section
//! [/stratified]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{
    EnsembleKind, FittedModel, LinearModel, ModelError, Node, Penalty, RoutingMode, Scaler, StratifiedPredictor, Tree,
    TreeEnsemble, TreeParams, VarianceModel, YeoJohnson,
};

pub const MODEL_MAGIC: &str = "#sdforge-model v1";

fn real(v: f64) -> String {
    format!("{v:?}")
}

fn reals(v: &[f64]) -> String {
    v.iter().map(|x| real(*x)).collect::<Vec<_>>().join("\t")
}

fn opt(v: Option<usize>) -> String {
    v.map_or("none".into(), |d| d.to_string())
}

fn linear_section(out: &mut String, m: &LinearModel) {
    let _ = writeln!(out, "[linear]");
    let _ = writeln!(out, "penalty\t{}", m.penalty.name());
    let _ = writeln!(out, "lambda\t{}", real(m.penalty.lambda()));
    let _ = writeln!(out, "l1_ratio\t{}", real(m.penalty.l1_ratio()));
    let _ = writeln!(out, "intercept\t{}", real(m.intercept));
    let _ = writeln!(out, "coef\t{}", reals(&m.coefficients));
    let _ = writeln!(out, "mean\t{}", reals(&m.scaler.mean));
    let _ = writeln!(out, "std\t{}", reals(&m.scaler.std));
    if let Some(t) = m.transform {
        let _ = writeln!(out, "transform\t{}\t{}", real(t.lambda), real(t.log_likelihood));
    }
    if let Some(v) = m.variance_model {
        let _ = writeln!(out, "variance\t{}\t{}", real(v.intercept), real(v.slope));
    }
    let _ = writeln!(out, "[/linear]");
}

fn ensemble_section(out: &mut String, m: &TreeEnsemble) {
    let _ = writeln!(out, "[ensemble]");
    let _ = writeln!(out, "kind\t{}", m.kind.name());
    let _ = writeln!(out, "init\t{}", real(m.init));
    let _ = writeln!(out, "learning_rate\t{}", real(m.learning_rate));
    let _ = writeln!(out, "max_depth\t{}", opt(m.tree_params.max_depth));
    let _ = writeln!(out, "min_samples_leaf\t{}", m.tree_params.min_samples_leaf);
    let _ = writeln!(out, "max_features\t{}", opt(m.tree_params.max_features));
    let _ = writeln!(out, "subsample\t{}", real(m.subsample));
    let _ = writeln!(out, "seed\t{}", m.seed);
    let _ = writeln!(out, "trees\t{}", m.trees.len());
    for t in &m.trees {
        let _ = writeln!(out, "tree\t{}", t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf { value } => {
                    let _ = writeln!(out, "L\t{}", real(value));
                }
                Node::Split { feature, threshold, left, right } => {
                    let _ = writeln!(out, "S\t{feature}\t{}\t{left}\t{right}", real(threshold));
                }
            }
        }
    }
    let _ = writeln!(out, "[/ensemble]");
}

pub fn write_model<W: Write>(model: &FittedModel, mut out: W) -> Result<(), ModelError> {
    let mut s = String::new();
    let _ = writeln!(s, "{MODEL_MAGIC}");
    let kind = match model {
        FittedModel::Linear(_) => "linear",
        FittedModel::Ensemble(_) => "ensemble",
        FittedModel::Stratified(_) => "stratified",
    };
    let _ = writeln!(s, "kind\t{kind}");
    let _ = writeln!(s, "features\t{}", model.feature_names().join("\t"));
    match model {
        FittedModel::Linear(m) => linear_section(&mut s, m),
        FittedModel::Ensemble(m) => ensemble_section(&mut s, m),
        FittedModel::Stratified(m) => {
            let _ = writeln!(s, "[stratified]");
            let _ = writeln!(s, "mode\t{}", m.mode.name());
            for (name, sub) in [("a", Some(&m.model_a)), ("b", Some(&m.model_b)), ("global", m.global.as_ref())] {
                if let Some(sub) = sub {
                    let _ = writeln!(s, "model\t{name}");
                    linear_section(&mut s, sub);
                }
            }
            let _ = writeln!(s, "[/stratified]");
        }
    }
    out.write_all(s.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn write_model_file(model: &FittedModel, path: &Path) -> Result<(), ModelError> {
    let tmp = path.with_extension("tmp");
    write_model(model, fs::File::create(&tmp)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor {
    lines: Vec<String>,
    pos: usize,
}

impl Cursor {
    fn err(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Format { line: self.pos, reason: reason.into() }
    }

    fn next(&mut self) -> Result<Vec<String>, ModelError> {
        let line = self.lines.get(self.pos).ok_or_else(|| ModelError::Format {
            line: self.pos + 1,
            reason: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok(line.split('\t').map(str::to_string).collect())
    }

    fn peek_key(&self) -> Option<&str> {
        self.lines.get(self.pos).map(|l| l.split('\t').next().unwrap_or(""))
    }

    fn marker(&mut self, expect: &str) -> Result<(), ModelError> {
        let fields = self.next()?;
        if fields != [expect] {
            let got = fields.join("\t");
            return Err(self.err(format!("expected {expect}, found {got:?}")));
        }
        Ok(())
    }

    /// Fields after `key` on the next line.
    fn values(&mut self, key: &str) -> Result<Vec<String>, ModelError> {
        let fields = self.next()?;
        if fields.first().map(String::as_str) != Some(key) {
            let got = fields.first().cloned().unwrap_or_default();
            return Err(self.err(format!("expected {key}, found {got:?}")));
        }
        Ok(fields[1..].to_vec())
    }

    fn value(&mut self, key: &str) -> Result<String, ModelError> {
        let v = self.values(key)?;
        if v.len() != 1 {
            return Err(self.err(format!("{key} takes one value")));
        }
        Ok(v.into_iter().next().unwrap_or_default())
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, ModelError> {
        s.parse().map_err(|_| self.err(format!("cannot parse {s:?}")))
    }

    fn real(&mut self, key: &str) -> Result<f64, ModelError> {
        let v = self.value(key)?;
        self.parse(&v)
    }

    fn reals(&mut self, key: &str, n: usize) -> Result<Vec<f64>, ModelError> {
        let v = self.values(key)?;
        if v.len() != n {
            return Err(self.err(format!("{key} has {} values, expected {n}", v.len())));
        }
        v.iter().map(|s| self.parse(s)).collect()
    }

    fn optional(&mut self, key: &str) -> Result<Option<usize>, ModelError> {
        let v = self.value(key)?;
        if v == "none" {
            Ok(None)
        } else {
            self.parse(&v).map(Some)
        }
    }
}

fn read_linear(c: &mut Cursor, features: &[String]) -> Result<LinearModel, ModelError> {
    let p = features.len();
    c.marker("[linear]")?;
    let kind = c.value("penalty")?;
    let lambda = c.real("lambda")?;
    let l1_ratio = c.real("l1_ratio")?;
    let penalty = match kind.as_str() {
        "ridge" => Penalty::Ridge { lambda },
        "lasso" => Penalty::Lasso { lambda },
        "elasticnet" => Penalty::ElasticNet { lambda, l1_ratio },
        other => return Err(c.err(format!("unknown penalty {other:?}"))),
    };
    let intercept = c.real("intercept")?;
    let coefficients = c.reals("coef", p)?;
    let mean = c.reals("mean", p)?;
    let std = c.reals("std", p)?;
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(c.err("scaler std must be positive"));
    }
    let mut transform = None;
    let mut variance_model = None;
    if c.peek_key() == Some("transform") {
        let v = c.reals("transform", 2)?;
        transform = Some(YeoJohnson { lambda: v[0], log_likelihood: v[1] });
    }
    if c.peek_key() == Some("variance") {
        let v = c.reals("variance", 2)?;
        variance_model = Some(VarianceModel { intercept: v[0], slope: v[1] });
    }
    c.marker("[/linear]")?;
    Ok(LinearModel {
        feature_names: features.to_vec(),
        penalty,
        coefficients,
        intercept,
        scaler: Scaler { mean, std },
        transform,
        variance_model,
    })
}

fn read_ensemble(c: &mut Cursor, features: &[String]) -> Result<TreeEnsemble, ModelError> {
    c.marker("[ensemble]")?;
    let kind_name = c.value("kind")?;
    let kind = EnsembleKind::from_name(&kind_name).ok_or_else(|| c.err(format!("unknown ensemble {kind_name:?}")))?;
    let init = c.real("init")?;
    let learning_rate = c.real("learning_rate")?;
    let max_depth = c.optional("max_depth")?;
    let leaf = c.value("min_samples_leaf")?;
    let min_samples_leaf = c.parse(&leaf)?;
    let max_features = c.optional("max_features")?;
    let subsample = c.real("subsample")?;
    let seed_text = c.value("seed")?;
    let seed = c.parse(&seed_text)?;
    let count_text = c.value("trees")?;
    let count: usize = c.parse(&count_text)?;
    let mut trees = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let size_text = c.value("tree")?;
        let size: usize = c.parse(&size_text)?;
        if size == 0 {
            return Err(c.err("empty tree"));
        }
        let mut nodes = Vec::with_capacity(size.min(1 << 20));
        for _ in 0..size {
            let f = c.next()?;
            let node = match f.first().map(String::as_str) {
                Some("L") if f.len() == 2 => Node::Leaf { value: c.parse(&f[1])? },
                Some("S") if f.len() == 5 => {
                    let feature: usize = c.parse(&f[1])?;
                    let left: u32 = c.parse(&f[3])?;
                    let right: u32 = c.parse(&f[4])?;
                    if feature >= features.len() || left as usize >= size || right as usize >= size {
                        return Err(c.err("split refers outside the tree or feature list"));
                    }
                    if left as usize <= nodes.len() || right as usize <= nodes.len() {
                        return Err(c.err("children must follow their parent"));
                    }
                    Node::Split { feature, threshold: c.parse(&f[2])?, left, right }
                }
                _ => return Err(c.err("bad tree node")),
            };
            nodes.push(node);
        }
        trees.push(Tree { nodes });
    }
    c.marker("[/ensemble]")?;
    Ok(TreeEnsemble {
        kind,
        feature_names: features.to_vec(),
        trees,
        init,
        learning_rate,
        tree_params: TreeParams { max_depth, min_samples_leaf, max_features },
        subsample,
        seed,
    })
}

pub fn read_model<R: Read>(input: R) -> Result<FittedModel, ModelError> {
    let lines: Vec<String> = BufReader::new(input).lines().collect::<Result<_, _>>()?;
    let mut c = Cursor { lines, pos: 0 };
    let head = c.lines.first().cloned().unwrap_or_default();
    if head != MODEL_MAGIC {
        return Err(ModelError::Version(head));
    }
    c.pos = 1;
    let kind = c.value("kind")?;
    let features = c.values("features")?;
    if features.is_empty() {
        return Err(c.err("no features"));
    }
    let model = match kind.as_str() {
        "linear" => FittedModel::Linear(read_linear(&mut c, &features)?),
        "ensemble" => FittedModel::Ensemble(read_ensemble(&mut c, &features)?),
        "stratified" => {
            c.marker("[stratified]")?;
            let mode_name = c.value("mode")?;
            let mode = RoutingMode::from_name(&mode_name).ok_or_else(|| c.err(format!("unknown mode {mode_name:?}")))?;
            let mut parts = [None, None, None];
            while c.peek_key() == Some("model") {
                let name = c.value("model")?;
                let slot = match name.as_str() {
                    "a" => 0,
                    "b" => 1,
                    "global" => 2,
                    other => return Err(c.err(format!("unknown submodel {other:?}"))),
                };
                parts[slot] = Some(read_linear(&mut c, &features)?);
            }
            c.marker("[/stratified]")?;
            let [a, b, global] = parts;
            let (Some(a), Some(b)) = (a, b) else {
                return Err(c.err("stratified model needs submodels a and b"));
            };
            FittedModel::Stratified(StratifiedPredictor::new(a, b, global, mode)?)
        }
        other => return Err(c.err(format!("unknown model kind {other:?}"))),
    };
    if c.lines[c.pos..].iter().any(|l| !l.trim().is_empty()) {
        return Err(c.err("trailing content"));
    }
    Ok(model)
}

pub fn read_model_file(path: &Path) -> Result<FittedModel, ModelError> {
    read_model(fs::File::open(path)?)
}
