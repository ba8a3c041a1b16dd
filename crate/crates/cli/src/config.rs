//! Flat `key = value` experiment configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Command-line
//! overrides use the same `key=value` syntax and are applied after the file.
//! Keys prefixed with `grid.` hold comma-separated sweep axes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cflgcn::datasets::{InductiveConfig, SyntheticBlocks};
use cflgcn::{
    FusionMode, FusionSpec, Model, ModelError, Network, NetworkSpec, Normalization, TrainConfig,
    Variant,
};
use rand::Rng;
use thiserror::Error;

pub const OUTPUT_ENV: &str = "CFLGCN_OUTPUT_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn bad(key: &str, value: &str, message: impl ToString) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: message.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `text` into `(key, value)` assignments in file order.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(split_assignment(line).ok_or_else(|| ConfigError::Syntax {
            line: idx + 1,
            text: raw.to_string(),
        })?);
    }
    Ok(out)
}

fn split_assignment(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CfLgcnU,
    CfLgcnE,
    LightGcn,
    /// LightGCN without propagation.
    Mf,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("mf") {
            return Ok(ModelKind::Mf);
        }
        Ok(match s.parse::<Variant>()? {
            Variant::CfLgcnU => ModelKind::CfLgcnU,
            Variant::CfLgcnE => ModelKind::CfLgcnE,
            Variant::LightGcn => ModelKind::LightGcn,
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Mf => f.write_str("mf"),
            other => f.write_str(other.variant().as_str()),
        }
    }
}

impl ModelKind {
    pub fn variant(self) -> Variant {
        match self {
            ModelKind::CfLgcnU => Variant::CfLgcnU,
            ModelKind::CfLgcnE => Variant::CfLgcnE,
            ModelKind::LightGcn | ModelKind::Mf => Variant::LightGcn,
        }
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub twin: bool,
    pub layers: usize,
    pub fusion: FusionMode,
    /// Per-set fusion weights for mean mode, applied to both sides.
    pub fusion_weights: Vec<f64>,
    pub normalization: Normalization,
    pub include_layer0: bool,
    pub dim: usize,
    pub init_std: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            kind: ModelKind::CfLgcnU,
            twin: false,
            layers: 3,
            fusion: FusionMode::Mean,
            fusion_weights: Vec::new(),
            normalization: Normalization::Symmetric,
            include_layer0: true,
            dim: 64,
            init_std: 0.1,
        }
    }
}

impl ModelSettings {
    /// Applies one assignment; returns `Ok(false)` for keys it does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "model" => self.kind = parse(key, value)?,
            "twin" => self.twin = parse_bool(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "fusion" => self.fusion = parse(key, value)?,
            "fusion_weights" => self.fusion_weights = parse_list(key, value)?,
            "normalization" => self.normalization = parse(key, value)?,
            "include_layer0" => self.include_layer0 = parse_bool(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn write(&self, out: &mut String) {
        let _ = writeln!(out, "model = {}", self.kind);
        let _ = writeln!(out, "twin = {}", self.twin);
        let _ = writeln!(out, "layers = {}", self.layers);
        let _ = writeln!(out, "fusion = {}", self.fusion);
        let _ = writeln!(out, "fusion_weights = {}", join(&self.fusion_weights));
        let _ = writeln!(out, "normalization = {}", self.normalization);
        let _ = writeln!(out, "include_layer0 = {}", self.include_layer0);
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "init_std = {}", self.init_std);
    }

    pub fn effective_layers(&self) -> usize {
        if self.kind == ModelKind::Mf {
            0
        } else {
            self.layers
        }
    }

    /// Name used in metric reports, e.g. `twin-cf-lgcn-u`.
    pub fn label(&self) -> String {
        if self.twin {
            format!("twin-{}", self.kind)
        } else {
            self.kind.to_string()
        }
    }

    pub fn fusion_spec(&self) -> FusionSpec {
        match self.fusion {
            FusionMode::Concat => FusionSpec::concat(),
            FusionMode::Mean if self.fusion_weights.is_empty() => FusionSpec::mean(),
            FusionMode::Mean => FusionSpec::weighted(self.fusion_weights.clone()),
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::new(self.kind.variant(), self.effective_layers())
            .with_normalization(self.normalization)
            .with_layer0(self.include_layer0)
    }

    /// Gaussian-initialized model for an `num_users x num_items` graph.
    pub fn build<R: Rng + ?Sized>(
        &self,
        num_users: usize,
        num_items: usize,
        rng: &mut R,
    ) -> Result<Model, ModelError> {
        let spec = self.network_spec();
        let mut net = || Network::init(spec, num_users, num_items, self.dim, self.init_std, rng);
        if self.twin {
            let a = net();
            let b = net();
            Model::twin(a, b, self.fusion_spec())
        } else {
            Ok(Model::single(net(), self.fusion_spec()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Directory with `train.txt`/`test.txt`, a single interaction file, or
    /// `synthetic`.
    pub dataset: String,
    pub output_dir: PathBuf,
    /// Split manifest location; defaults to `<output_dir>/split`.
    pub split_dir: Option<PathBuf>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    /// Validation cutoff used for early stopping and sweep selection.
    pub val_k: usize,
    pub k: Vec<usize>,
    pub recommend_k: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Used when the dataset has no separate test file.
    pub test_fraction: f64,
    pub inductive: bool,
    pub inductive_cfg: InductiveConfig,
    pub synthetic: SyntheticBlocks,
    pub refresh_user_embeddings: bool,
    /// Interaction file with extra edges for inductive inference.
    pub extended_edges: Option<PathBuf>,
    /// Sweep axes: key to candidate values.
    pub grid: BTreeMap<String, Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let output_dir = std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        Self {
            dataset: "synthetic".to_string(),
            output_dir,
            split_dir: None,
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            val_k: 20,
            k: vec![20],
            recommend_k: 20,
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.2,
            inductive: false,
            inductive_cfg: InductiveConfig::default(),
            synthetic: SyntheticBlocks::two_block(),
            refresh_user_embeddings: false,
            extended_edges: None,
            grid: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, crate::CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::io(path, e))?;
            for (k, v) in parse_assignments(&text)? {
                cfg.apply(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = split_assignment(o).ok_or_else(|| {
                crate::CliError::Usage(format!("override `{o}` is not of the form key=value"))
            })?;
            cfg.apply(&k, &v)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if self.model.apply(key, value)? {
            return Ok(());
        }
        if let Some(axis) = key.strip_prefix("grid.") {
            if axis.starts_with("grid.") || !Self::is_known(axis) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            let values: Vec<String> = value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if values.is_empty() {
                return Err(bad(key, value, "empty grid axis"));
            }
            for v in &values {
                self.clone().apply(axis, v)?;
            }
            self.grid.insert(axis.to_string(), values);
            return Ok(());
        }
        let t = &mut self.train;
        let ind = &mut self.inductive_cfg;
        let syn = &mut self.synthetic;
        match key {
            "dataset" => self.dataset = value.to_string(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "split_dir" => self.split_dir = Some(PathBuf::from(value)),
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "l2_lambda" => t.l2_lambda = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "edge_dropout" => t.edge_dropout_p = parse(key, value)?,
            "negatives_per_positive" => t.negatives_per_positive = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "val_k" => self.val_k = parse(key, value)?,
            "k" => self.k = parse_list(key, value)?,
            "recommend_k" => self.recommend_k = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "inductive" => self.inductive = parse_bool(key, value)?,
            "holdout_fraction" => ind.holdout_fraction = parse(key, value)?,
            "inference_fraction" => ind.inference_fraction = parse(key, value)?,
            "min_user_interactions" => ind.min_user_interactions = parse(key, value)?,
            "min_item_interactions" => ind.min_item_interactions = parse(key, value)?,
            "synthetic_users" => syn.users = parse(key, value)?,
            "synthetic_items" => syn.items = parse(key, value)?,
            "synthetic_blocks" => syn.blocks = parse(key, value)?,
            "synthetic_density" => syn.density = parse(key, value)?,
            "synthetic_noise" => syn.noise = parse(key, value)?,
            "refresh_user_embeddings" => self.refresh_user_embeddings = parse_bool(key, value)?,
            "extended_edges" => {
                self.extended_edges = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn is_known(key: &str) -> bool {
        let mut probe = Self::default();
        !matches!(probe.apply(key, ""), Err(ConfigError::UnknownKey(_)))
    }

    /// Cross-field invariants.
    pub fn check(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k.is_empty() || self.k.contains(&0) {
            return fail("k must list cutoffs of at least 1");
        }
        if self.val_k == 0 || self.recommend_k == 0 {
            return fail("val_k and recommend_k must be at least 1");
        }
        if self.model.dim == 0 {
            return fail("dim must be at least 1");
        }
        if !(self.model.init_std.is_finite() && self.model.init_std >= 0.0) {
            return fail("init_std must be non-negative");
        }
        let syn = &self.synthetic;
        if self.dataset == "synthetic"
            && (syn.blocks == 0 || syn.users < syn.blocks || syn.items < syn.blocks)
        {
            return fail("synthetic data needs at least one user and item per block");
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn split_dir(&self) -> PathBuf {
        self.split_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("split"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoint")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Every grid point as a list of assignments, in lexicographic axis order.
    pub fn grid_points(&self) -> Vec<Vec<(String, String)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }

    /// Re-parseable dump of the effective configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let t = &self.train;
        let ind = &self.inductive_cfg;
        let syn = &self.synthetic;
        let _ = writeln!(out, "dataset = {}", self.dataset);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        if let Some(d) = &self.split_dir {
            let _ = writeln!(out, "split_dir = {}", d.display());
        }
        self.model.write(&mut out);
        for (k, v) in [
            ("learning_rate", t.learning_rate.to_string()),
            ("l2_lambda", t.l2_lambda.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("edge_dropout", t.edge_dropout_p.to_string()),
            (
                "negatives_per_positive",
                t.negatives_per_positive.to_string(),
            ),
            ("seed", self.seed.to_string()),
            ("val_k", self.val_k.to_string()),
            ("k", join(&self.k)),
            ("recommend_k", self.recommend_k.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("inductive", self.inductive.to_string()),
            ("holdout_fraction", ind.holdout_fraction.to_string()),
            ("inference_fraction", ind.inference_fraction.to_string()),
            (
                "min_user_interactions",
                ind.min_user_interactions.to_string(),
            ),
            (
                "min_item_interactions",
                ind.min_item_interactions.to_string(),
            ),
            ("synthetic_users", syn.users.to_string()),
            ("synthetic_items", syn.items.to_string()),
            ("synthetic_blocks", syn.blocks.to_string()),
            ("synthetic_density", syn.density.to_string()),
            ("synthetic_noise", syn.noise.to_string()),
            (
                "refresh_user_embeddings",
                self.refresh_user_embeddings.to_string(),
            ),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        if let Some(p) = &self.extended_edges {
            let _ = writeln!(out, "extended_edges = {}", p.display());
        }
        for (k, v) in &self.grid {
            let _ = writeln!(out, "grid.{k} = {}", v.join(","));
        }
        out
    }
}
