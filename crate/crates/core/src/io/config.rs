//! Run configuration from flat `section.key = value` files.
//!
//! Files are parsed as TOML, flattened to dotted key paths and applied one
//! key at a time, so unknown keys and mistyped values are rejected with the
//! offending path. The same setter serves `--set key=value` overrides.

use std::path::Path;

use serde::Serialize;
use toml::Value;

use crate::error::{FcrError, Result};
use crate::eval::{Correlation, DegTest, EvalConfig};
use crate::math::LatentDims;
use crate::data::Dataset;
use crate::model::{Architecture, ModelConfig};
use crate::simgen::{InteractionLaw, SimConfig};
use crate::train::{Grid, GridAxis, TrainConfig};

/// Bundled reference profiles: `(name, file contents)`.
pub const PROFILES: [(&str, &str); 4] = [
    ("synthetic", include_str!("../../configs/synthetic.toml")),
    ("sciplex", include_str!("../../configs/sciplex.toml")),
    ("multiplex_tram", include_str!("../../configs/multiplex_tram.toml")),
    ("multiplex_79", include_str!("../../configs/multiplex_79.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub dims: LatentDims,
    pub arch: Architecture,
    pub seed: u64,
    /// Normalize encoder inputs and decoder outputs per gene.
    pub scale_genes: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dims: LatentDims { n_x: 1, n_tx: 4, n_t: 1 },
            arch: Architecture::default(),
            seed: 0,
            scale_genes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub grid: Grid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            grid: Grid::standard(),
        }
    }
}

fn type_error(key: &str, want: &str, got: &Value) -> FcrError {
    FcrError::Config(format!("`{key}` expects {want}, got {got}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(type_error(key, "a nonnegative integer", v)),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    as_usize(key, v).map(|n| n as u64)
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_f64_list(key: &str, v: &Value) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(|i| as_f64(key, i)).collect(),
        _ => Err(type_error(key, "an array of numbers", v)),
    }
}

/// Flattens nested tables to `(dotted.path, leaf)` pairs in file order.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            other => out.push((path, other.clone())),
        }
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML value, or as a
/// bare string when that fails.
pub fn parse_value(text: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(text.to_string()),
    }
}

impl RunConfig {
    /// Defaults overlaid with a bundled profile.
    pub fn profile(name: &str) -> Result<Self> {
        let (_, text) = PROFILES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PROFILES.iter().map(|p| p.0).collect();
            FcrError::Config(format!("unknown profile `{name}`; available: {}", names.join(", ")))
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, Path::new(name))?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| FcrError::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let table: toml::Table = toml::from_str(text).map_err(|e| FcrError::Format {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| FcrError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), &parse_value(value.trim()))
    }

    /// Sets every seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        if key == "seed" {
            self.set_seed(as_u64(key, v)?);
            return Ok(());
        }
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| FcrError::Config(format!("unknown key `{key}`")))?;
        match section {
            "sim" => self.set_sim(key, field, v),
            "model" => self.set_model(key, field, v),
            "train" => self.set_train(key, field, v),
            "eval" => self.set_eval(key, field, v),
            "grid" => self.set_grid(key, field, v),
            _ => Err(FcrError::Config(format!("unknown key `{key}`"))),
        }
    }

    fn set_sim(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let s = &mut self.sim;
        match field {
            "sample_count" => s.sample_count = as_usize(key, v)?,
            "t_support" => s.t_support = as_f64_list(key, v)?,
            "x_support" => s.x_support = as_f64_list(key, v)?,
            "n_x" => s.dims.n_x = as_usize(key, v)?,
            "n_tx" => s.dims.n_tx = as_usize(key, v)?,
            "n_t" => s.dims.n_t = as_usize(key, v)?,
            "y_dim" => s.y_dim = as_usize(key, v)?,
            "mixer_depth" => s.mixer_depth = as_usize(key, v)?,
            "mixer_slope" => s.mixer_slope = as_f64(key, v)?,
            "standardize" => s.standardize = as_bool(key, v)?,
            "seed" => s.seed = as_u64(key, v)?,
            "interaction" => {
                s.interaction = match as_str(key, v)? {
                    "product" => InteractionLaw::Product { coeffs: vec![1.0; s.dims.n_tx] },
                    "nonlinear" => InteractionLaw::Nonlinear,
                    other => return Err(FcrError::Config(format!("`{key}`: unknown law `{other}`"))),
                }
            }
            "interaction_coeffs" => s.interaction = InteractionLaw::Product { coeffs: as_f64_list(key, v)? },
            _ => return Err(FcrError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_model(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let m = &mut self.model;
        match field {
            "n_x" => m.dims.n_x = as_usize(key, v)?,
            "n_tx" => m.dims.n_tx = as_usize(key, v)?,
            "n_t" => m.dims.n_t = as_usize(key, v)?,
            "hidden" => m.arch.hidden = as_usize(key, v)?,
            "depth" => m.arch.depth = as_usize(key, v)?,
            "embed_width" => m.arch.embed_width = as_usize(key, v)?,
            "slope" => m.arch.slope = as_f64(key, v)?,
            "seed" => m.seed = as_u64(key, v)?,
            "scale_genes" => m.scale_genes = as_bool(key, v)?,
            _ => return Err(FcrError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let t = &mut self.train;
        match field {
            "epochs" => t.epochs = as_usize(key, v)?,
            "batch_size" => t.batch_size = as_usize(key, v)?,
            "lr" => t.lr = as_f64(key, v)?,
            "disc_lr" => t.disc_lr = as_f64(key, v)?,
            "disc_steps" => t.disc_steps = as_usize(key, v)?,
            "w_sim" => t.weights.sim = as_f64(key, v)?,
            "w_ct" => t.weights.ct = as_f64(key, v)?,
            "w_dis" => t.weights.dis = as_f64(key, v)?,
            "seed" => t.seed = as_u64(key, v)?,
            "split_prediction" => t.split.prediction = as_f64(key, v)?,
            "split_test" => t.split.test = as_f64(key, v)?,
            "split_validation" => t.split.validation = as_f64(key, v)?,
            _ => return Err(FcrError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_eval(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let e = &mut self.eval;
        match field {
            "k_neighbors" => e.k_neighbors = as_usize(key, v)?,
            "resolution" => e.resolution = as_f64(key, v)?,
            "kci_samples" => e.kci_samples = as_usize(key, v)?,
            "kci_repeats" => e.kci_repeats = as_usize(key, v)?,
            "hsic_samples" => e.hsic_samples = as_usize(key, v)?,
            "hsic_permutations" => e.hsic_permutations = as_usize(key, v)?,
            "top_k" => e.top_k = as_usize(key, v)?,
            "seed" => e.seed = as_u64(key, v)?,
            "deg_test" => {
                e.deg_test = match as_str(key, v)? {
                    "welch" => DegTest::Welch,
                    "mann_whitney" => DegTest::MannWhitney,
                    other => return Err(FcrError::Config(format!("`{key}`: unknown test `{other}`"))),
                }
            }
            "correlation" => {
                e.correlation = match as_str(key, v)? {
                    "rank" => Correlation::Rank,
                    "linear" => Correlation::Linear,
                    other => return Err(FcrError::Config(format!("`{key}`: unknown correlation `{other}`"))),
                }
            }
            _ => return Err(FcrError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `grid.<train key> = [values]` replaces or adds that axis.
    fn set_grid(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let values = as_f64_list(key, v)?;
        let mut probe = TrainConfig::default();
        for x in &values {
            crate::train::apply_override(&mut probe, field, *x)?;
        }
        match self.grid.axes.iter_mut().find(|a| a.key == field) {
            Some(axis) => axis.values = values,
            None => self.grid.axes.push(GridAxis {
                key: field.to_string(),
                values,
            }),
        }
        Ok(())
    }

    /// Model configuration for `ds` from the `model` section.
    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        let m = &self.model;
        let mut mc = ModelConfig::for_dataset(ds, m.dims, m.arch.clone(), m.seed);
        if !m.scale_genes {
            mc.scaling = None;
        }
        mc
    }

    /// Checks every section; runs before any compute.
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let d = self.model.dims;
        if d.n_x == 0 || d.n_tx == 0 || d.n_t == 0 {
            return Err(FcrError::Config("model.n_x, model.n_tx and model.n_t must be at least 1".into()));
        }
        if self.model.arch.depth == 0 || self.model.arch.hidden == 0 || self.model.arch.embed_width == 0 {
            return Err(FcrError::Config("model.depth, model.hidden and model.embed_width must be positive".into()));
        }
        self.train.validate()?;
        self.eval.validate()
    }

    /// Resolved configuration in the same key layout `apply_text` reads.
    pub fn to_toml(&self) -> String {
        fn int(n: usize) -> Value {
            Value::Integer(i64::try_from(n).unwrap_or(i64::MAX))
        }
        fn seed(n: u64) -> Value {
            Value::Integer(i64::try_from(n).unwrap_or(i64::MAX))
        }
        fn floats(xs: &[f64]) -> Value {
            Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
        }
        fn text(s: &str) -> Value {
            Value::String(s.to_string())
        }

        let s = &self.sim;
        let mut sim = toml::Table::new();
        sim.insert("sample_count".into(), int(s.sample_count));
        sim.insert("t_support".into(), floats(&s.t_support));
        sim.insert("x_support".into(), floats(&s.x_support));
        sim.insert("n_x".into(), int(s.dims.n_x));
        sim.insert("n_tx".into(), int(s.dims.n_tx));
        sim.insert("n_t".into(), int(s.dims.n_t));
        sim.insert("y_dim".into(), int(s.y_dim));
        sim.insert("mixer_depth".into(), int(s.mixer_depth));
        sim.insert("mixer_slope".into(), Value::Float(s.mixer_slope));
        sim.insert("standardize".into(), Value::Boolean(s.standardize));
        sim.insert("seed".into(), seed(s.seed));
        match &s.interaction {
            InteractionLaw::Product { coeffs } => {
                sim.insert("interaction_coeffs".into(), floats(coeffs));
            }
            InteractionLaw::Nonlinear => {
                sim.insert("interaction".into(), text("nonlinear"));
            }
        }

        let m = &self.model;
        let mut model = toml::Table::new();
        model.insert("n_x".into(), int(m.dims.n_x));
        model.insert("n_tx".into(), int(m.dims.n_tx));
        model.insert("n_t".into(), int(m.dims.n_t));
        model.insert("hidden".into(), int(m.arch.hidden));
        model.insert("depth".into(), int(m.arch.depth));
        model.insert("embed_width".into(), int(m.arch.embed_width));
        model.insert("slope".into(), Value::Float(m.arch.slope));
        model.insert("seed".into(), seed(m.seed));
        model.insert("scale_genes".into(), Value::Boolean(m.scale_genes));

        let t = &self.train;
        let mut train = toml::Table::new();
        train.insert("epochs".into(), int(t.epochs));
        train.insert("batch_size".into(), int(t.batch_size));
        train.insert("lr".into(), Value::Float(t.lr));
        train.insert("disc_lr".into(), Value::Float(t.disc_lr));
        train.insert("disc_steps".into(), int(t.disc_steps));
        train.insert("w_sim".into(), Value::Float(t.weights.sim));
        train.insert("w_ct".into(), Value::Float(t.weights.ct));
        train.insert("w_dis".into(), Value::Float(t.weights.dis));
        train.insert("seed".into(), seed(t.seed));
        train.insert("split_prediction".into(), Value::Float(t.split.prediction));
        train.insert("split_test".into(), Value::Float(t.split.test));
        train.insert("split_validation".into(), Value::Float(t.split.validation));

        let e = &self.eval;
        let mut eval = toml::Table::new();
        eval.insert("k_neighbors".into(), int(e.k_neighbors));
        eval.insert("resolution".into(), Value::Float(e.resolution));
        eval.insert("kci_samples".into(), int(e.kci_samples));
        eval.insert("kci_repeats".into(), int(e.kci_repeats));
        eval.insert("hsic_samples".into(), int(e.hsic_samples));
        eval.insert("hsic_permutations".into(), int(e.hsic_permutations));
        eval.insert("top_k".into(), int(e.top_k));
        eval.insert("seed".into(), seed(e.seed));
        let deg = match e.deg_test {
            DegTest::Welch => "welch",
            DegTest::MannWhitney => "mann_whitney",
        };
        eval.insert("deg_test".into(), text(deg));
        let corr = match e.correlation {
            Correlation::Rank => "rank",
            Correlation::Linear => "linear",
        };
        eval.insert("correlation".into(), text(corr));

        let mut grid = toml::Table::new();
        for axis in &self.grid.axes {
            grid.insert(axis.key.clone(), floats(&axis.values));
        }

        let mut root = toml::Table::new();
        for (name, table) in [("sim", sim), ("model", model), ("train", train), ("eval", eval), ("grid", grid)] {
            root.insert(name.into(), Value::Table(table));
        }
        toml::to_string(&root).expect("configuration serializes")
    }
}
