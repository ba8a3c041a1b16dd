//! Checkpoints: a `manifest.txt` of `key = value` lines plus one raw
//! little-endian `f64` file per parameter table, row-major.

use std::fmt::Write as _;
use std::path::Path;

use cflgcn::Model;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_assignments, ConfigError, ModelSettings};
use crate::CliError;

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub settings: ModelSettings,
    pub num_users: usize,
    pub num_items: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_seconds: f64,
}

pub fn save(dir: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut text = String::new();
    let _ = writeln!(text, "format = {FORMAT}");
    meta.settings.write(&mut text);
    let _ = writeln!(text, "num_users = {}", meta.num_users);
    let _ = writeln!(text, "num_items = {}", meta.num_items);
    let _ = writeln!(text, "seed = {}", meta.seed);
    let _ = writeln!(text, "best_epoch = {}", meta.best_epoch);
    let _ = writeln!(text, "epochs_run = {}", meta.epochs_run);
    let _ = writeln!(text, "train_seconds = {}", meta.train_seconds);
    for (idx, table) in model.tables().iter().enumerate() {
        let name = format!("table_{idx}.bin");
        let v = table.values();
        let _ = writeln!(text, "table.{idx} = {name} {} {}", v.nrows(), v.ncols());
        let mut bytes = Vec::with_capacity(v.len() * 8);
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let path = dir.join(&name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(path, e))?;
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| CliError::io(path, e))
}

fn malformed(message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(format!(
        "checkpoint manifest: {}",
        message.into()
    )))
}

pub fn load(dir: &Path) -> Result<(Model, CheckpointMeta), CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut settings = ModelSettings::default();
    let mut fields = std::collections::BTreeMap::new();
    let mut tables: Vec<(usize, String, usize, usize)> = Vec::new();
    for (key, value) in parse_assignments(&text)? {
        if settings.apply(&key, &value)? {
            continue;
        }
        if let Some(idx) = key.strip_prefix("table.") {
            let parts: Vec<&str> = value.split_whitespace().collect();
            let [file, rows, cols] = parts[..] else {
                return Err(malformed(format!("bad table entry `{value}`")));
            };
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| malformed(format!("bad number `{s}`")))
            };
            tables.push((num(idx)?, file.to_string(), num(rows)?, num(cols)?));
        } else {
            fields.insert(key, value);
        }
    }
    let field = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| malformed(format!("missing `{k}`")))
    };
    if field("format")? != FORMAT {
        return Err(malformed("unsupported format"));
    }
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, CliError> {
        v.parse()
            .map_err(|_| malformed(format!("bad value for `{k}`")))
    }
    let meta = CheckpointMeta {
        settings,
        num_users: num("num_users", field("num_users")?)?,
        num_items: num("num_items", field("num_items")?)?,
        seed: num("seed", field("seed")?)?,
        best_epoch: num("best_epoch", field("best_epoch")?)?,
        epochs_run: num("epochs_run", field("epochs_run")?)?,
        train_seconds: num("train_seconds", field("train_seconds")?)?,
    };
    tables.sort_by_key(|t| t.0);
    if tables.iter().enumerate().any(|(k, t)| t.0 != k) {
        return Err(malformed("table indices are not contiguous"));
    }
    let mut values = Vec::with_capacity(tables.len());
    for (_, file, rows, cols) in tables {
        let path = dir.join(&file);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if bytes.len() != rows * cols * 8 {
            return Err(malformed(format!(
                "{file} holds {} bytes, expected {}",
                bytes.len(),
                rows * cols * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        values.push(Array2::from_shape_vec((rows, cols), data).expect("length checked"));
    }
    let skeleton = meta
        .settings
        .build(
            meta.num_users,
            meta.num_items,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| malformed(e.to_string()))?;
    let model = skeleton
        .with_parameters(values)
        .map_err(|e| malformed(e.to_string()))?;
    Ok((model, meta))
}
