//! Metric reports as comma-separated files.
//!
//! Columns: `model,layers,fusion,recall@K,ndcg@K,seed,wall_time`, with the
//! cutoff spelled into the header. Recall and NDCG are percentages. Appending
//! to an existing file keeps its header; every row of a file shares one K.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub layers: usize,
    pub fusion: String,
    pub k: usize,
    pub recall_pct: f64,
    pub ndcg_pct: f64,
    pub seed: u64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no results to write")]
    Empty,
    #[error("field `{0}` contains a separator")]
    Field(String),
    #[error("rows mix cutoffs {0} and {1}")]
    MixedK(usize, usize),
    #[error("{}: existing header `{found}` does not match `{expected}`", path.display())]
    HeaderMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn header(k: usize) -> String {
    format!("model,layers,fusion,recall@{k},ndcg@{k},seed,wall_time")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_field(s: &str) -> Result<&str, MetricsError> {
    if s.contains([',', '\n']) {
        return Err(MetricsError::Field(s.to_string()));
    }
    Ok(s)
}

/// Appends `rows` to `path`, writing the header only if the file is new or
/// empty.
pub fn write_metrics(rows: &[MetricRow], path: &Path) -> Result<(), MetricsError> {
    let first = rows.first().ok_or(MetricsError::Empty)?;
    if let Some(r) = rows.iter().find(|r| r.k != first.k) {
        return Err(MetricsError::MixedK(first.k, r.k));
    }
    let expected = header(first.k);
    let existing = match std::fs::File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .next()
            .transpose()
            .map_err(io_err(path))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut text = String::new();
    match existing.as_deref() {
        None | Some("") => {
            text.push_str(&expected);
            text.push('\n');
        }
        Some(found) if found == expected => {}
        Some(found) => {
            return Err(MetricsError::HeaderMismatch {
                path: path.to_path_buf(),
                expected,
                found: found.to_string(),
            })
        }
    }
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            check_field(&r.model)?,
            r.layers,
            check_field(&r.fusion)?,
            r.recall_pct,
            r.ndcg_pct,
            r.seed,
            r.wall_time
        ));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| MetricsError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let k = head
        .split(',')
        .nth(3)
        .and_then(|c| c.strip_prefix("recall@"))
        .and_then(|k| k.parse().ok())
        .filter(|&k| head == header(k))
        .ok_or_else(|| parse_err(1, format!("unexpected header `{head}`")))?;
    lines
        .enumerate()
        .map(|(idx, line)| {
            let line_no = idx + 2;
            let cols: Vec<&str> = line.split(',').collect();
            let [model, layers, fusion, recall, ndcg, seed, wall] = cols[..] else {
                return Err(parse_err(
                    line_no,
                    format!("expected 7 columns, found {}", cols.len()),
                ));
            };
            fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
                s.parse().map_err(|_| format!("bad number `{s}`"))
            }
            let row = || -> Result<MetricRow, String> {
                Ok(MetricRow {
                    model: model.to_string(),
                    layers: num(layers)?,
                    fusion: fusion.to_string(),
                    k,
                    recall_pct: num(recall)?,
                    ndcg_pct: num(ndcg)?,
                    seed: num(seed)?,
                    wall_time: num(wall)?,
                })
            };
            row().map_err(|m| parse_err(line_no, m))
        })
        .collect()
}
