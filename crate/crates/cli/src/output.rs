//! Result files: one JSON document per run plus long-format CSVs. Nothing
//! time-dependent goes into them; run metadata lives in `metadata.json`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sortsel::counterfactual::{QuantileResult, SortingTable};

use crate::ingest::write_text;

pub const FIT_SCHEMA: &str = "sortsel.fit/1";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// File-name-safe version of a period label.
pub fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    unix_time: u64,
    args: Vec<String>,
    files: &'a [PathBuf],
}

/// Timestamps and the command line, kept apart from the deterministic results.
pub fn write_metadata(dir: &Path, command: &str, files: &[PathBuf]) -> Result<()> {
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        args: std::env::args().collect(),
        files,
    };
    write_json(&dir.join("metadata.json"), &meta)
}

/// One row of a long-format sorting-table CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub source: String,
    /// 1-based decile of the wife.
    pub row: usize,
    /// 1-based decile of the husband.
    pub col: usize,
    pub value: f64,
    pub std_error: Option<f64>,
}

pub fn table_rows(label: &str, source: &str, t: &SortingTable) -> Vec<TableRow> {
    let mut out = Vec::with_capacity(t.size() * t.size());
    for (i, r) in t.cells.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            out.push(TableRow {
                label: label.into(),
                source: source.into(),
                row: i + 1,
                col: j + 1,
                value: v,
                std_error: t.std_errors.as_ref().map(|s| s[i][j]),
            });
        }
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|x| x.map_err(anyhow::Error::from)).collect()
}

/// Rebuilds the cells of one table from long-format rows.
pub fn table_from_rows(rows: &[TableRow], label: &str, source: &str) -> Result<Vec<Vec<f64>>> {
    let sel: Vec<&TableRow> = rows.iter().filter(|r| r.label == label && r.source == source).collect();
    let g = sel.iter().map(|r| r.row.max(r.col)).max().unwrap_or(0);
    if g == 0 || sel.len() != g * g {
        bail!("table {label}/{source}: expected a full square of cells, found {}", sel.len());
    }
    let mut cells = vec![vec![f64::NAN; g]; g];
    for r in sel {
        cells[r.row - 1][r.col - 1] = r.value;
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub label: String,
    pub spouse: String,
    pub tau: f64,
    pub value: f64,
    pub cdf: f64,
    pub boundary: bool,
}

pub fn quantile_rows(label: &str, spouse: &str, q: &[QuantileResult]) -> Vec<QuantileRow> {
    q.iter()
        .map(|q| QuantileRow {
            label: label.into(),
            spouse: spouse.into(),
            tau: q.tau,
            value: q.value,
            cdf: q.cdf,
            boundary: q.boundary,
        })
        .collect()
}
