//! Household CSV reading and writing.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use sortsel::distreg::sample_quantile;
use sortsel::selection::Household;

use crate::config::ColumnMap;

/// Rows listed individually in an ingest failure.
const MAX_LISTED: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line of the file (the header is line 1).
    pub line: usize,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.column {
            Some(c) => write!(f, "line {}: column '{}': {}", self.line, c, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeriodData {
    pub label: String,
    pub households: Vec<Household>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub periods: Vec<PeriodData>,
    pub x_names: Vec<String>,
    pub z_only_names: Vec<String>,
}

impl Dataset {
    pub fn period(&self, label: &str) -> Option<&PeriodData> {
        self.periods.iter().find(|p| p.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodReport {
    pub label: String,
    pub households: usize,
    pub working_couples: usize,
    pub total_weight: f64,
    pub deciles_w: Vec<f64>,
    pub deciles_h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub violations: usize,
    pub periods: Vec<PeriodReport>,
}

/// How raw period values are grouped.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodBins {
    Raw,
    Width(f64),
    Ranges(Vec<(f64, f64)>),
}

impl PeriodBins {
    pub fn parse(s: Option<&str>) -> Result<Self> {
        let Some(s) = s.map(str::trim).filter(|s| !s.is_empty()) else {
            return Ok(Self::Raw);
        };
        if let Ok(w) = s.parse::<f64>() {
            if !(w > 0.0) {
                bail!("period bin width must be positive, got {w}");
            }
            return Ok(Self::Width(w));
        }
        let ranges = s
            .split(',')
            .map(|r| {
                let (a, b) = r
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| anyhow!("period bin '{r}' is not of the form lo-hi"))?;
                let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("period bin '{r}' has lo > hi");
                }
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        for w in 0..ranges.len() {
            for v in w + 1..ranges.len() {
                let (p, q) = (ranges[w], ranges[v]);
                if p.0 <= q.1 && q.0 <= p.1 {
                    bail!("period bins {}-{} and {}-{} overlap", p.0, p.1, q.0, q.1);
                }
            }
        }
        Ok(Self::Ranges(ranges))
    }
}

fn num_label(v: f64) -> String {
    format!("{v}")
}

/// Column positions of a parsed header.
struct Layout {
    d_w: usize,
    d_h: usize,
    y_w: usize,
    y_h: usize,
    weight: Option<usize>,
    period: Option<usize>,
    x: Vec<usize>,
    z_only: Vec<usize>,
}

impl Layout {
    fn new(header: &csv::StringRecord, map: &ColumnMap) -> Result<Self> {
        let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let mut missing = Vec::new();
        let mut need = |name: &str| match pos.get(name) {
            Some(&i) => i,
            None => {
                missing.push(name.to_string());
                usize::MAX
            }
        };
        let layout = Self {
            d_w: need(&map.d_w),
            d_h: need(&map.d_h),
            y_w: need(&map.y_w),
            y_h: need(&map.y_h),
            weight: pos.get(map.weight.as_str()).copied(),
            period: pos.get(map.period.as_str()).copied(),
            x: map.x.iter().map(|c| need(c)).collect(),
            z_only: map.z_only.iter().map(|c| need(c)).collect(),
        };
        if !missing.is_empty() {
            bail!("input is missing mapped column(s): {}", missing.join(", "));
        }
        Ok(layout)
    }
}

fn parse_flag(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(format!("expected 0/1, got '{other}'")),
    }
}

fn parse_num(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: '{}'", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: '{}'", s.trim()))
    }
}

fn parse_wage(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    let v = parse_num(s)?;
    if v > 0.0 {
        Ok(Some(v))
    } else {
        Err(format!("wage must be positive, got {v}"))
    }
}

/// Reads households, grouping them by period; stops with a summary of every
/// offending row when any row is invalid.
pub fn ingest(path: &Path, map: &ColumnMap, bins: &PeriodBins) -> Result<(Dataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let layout = Layout::new(&header, map)?;
    let mut errors: Vec<RowError> = Vec::new();
    let mut rows: Vec<(String, Household)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line, column: None, message: e.to_string() });
                continue;
            }
        };
        let mut row_errs = Vec::new();
        let mut field = |i: usize, name: &str, f: &dyn Fn(&str) -> std::result::Result<f64, String>| -> f64 {
            match f(rec.get(i).unwrap_or("")) {
                Ok(v) => v,
                Err(m) => {
                    row_errs.push(RowError { line, column: Some(name.to_string()), message: m });
                    f64::NAN
                }
            }
        };
        let flag = |s: &str| parse_flag(s).map(f64::from);
        let d_w = field(layout.d_w, &map.d_w, &flag) == 1.0;
        let d_h = field(layout.d_h, &map.d_h, &flag) == 1.0;
        let wage = |s: &str| parse_wage(s).map(|w| w.unwrap_or(f64::NAN));
        let y_w = field(layout.y_w, &map.y_w, &wage);
        let y_h = field(layout.y_h, &map.y_h, &wage);
        let weight = match layout.weight {
            Some(i) => field(i, &map.weight, &parse_num),
            None => 1.0,
        };
        let mut x_row = vec![1.0];
        for (&i, name) in layout.x.iter().zip(&map.x) {
            x_row.push(field(i, name, &parse_num));
        }
        let mut z_row = x_row.clone();
        for (&i, name) in layout.z_only.iter().zip(&map.z_only) {
            z_row.push(field(i, name, &parse_num));
        }
        let label = match layout.period {
            None => Ok("all".to_string()),
            Some(i) => {
                let raw = rec.get(i).unwrap_or("").trim();
                match bins {
                    PeriodBins::Raw if !raw.is_empty() => Ok(raw.to_string()),
                    PeriodBins::Raw => Err("empty period".to_string()),
                    PeriodBins::Width(_) | PeriodBins::Ranges(_) => parse_num(raw).and_then(|p| match bins {
                        PeriodBins::Width(_) => Ok(num_label(p)),
                        PeriodBins::Ranges(r) => r
                            .iter()
                            .find(|(a, b)| *a <= p && p <= *b)
                            .map(|(a, b)| format!("{}-{}", num_label(*a), num_label(*b)))
                            .ok_or_else(|| format!("period {p} outside every bin")),
                        PeriodBins::Raw => unreachable!(),
                    }),
                }
            }
        };
        let label = match label {
            Ok(l) => l,
            Err(m) => {
                row_errs.push(RowError { line, column: Some(map.period.clone()), message: m });
                String::new()
            }
        };
        if !row_errs.is_empty() {
            errors.extend(row_errs);
            continue;
        }
        let h = Household {
            d_w,
            d_h,
            y_w: y_w.is_finite().then_some(y_w),
            y_h: y_h.is_finite().then_some(y_h),
            x_row,
            z_row,
            weight,
        };
        if let Err(e) = h.validate() {
            errors.push(RowError { line, column: None, message: e.to_string() });
            continue;
        }
        rows.push((label, h));
    }
    if !errors.is_empty() {
        let listed: Vec<String> = errors.iter().take(MAX_LISTED).map(ToString::to_string).collect();
        let more = errors.len().saturating_sub(MAX_LISTED);
        let tail = if more > 0 { format!("\n  ... and {more} more") } else { String::new() };
        bail!("{} invalid row(s) in {}:\n  {}{}", errors.len(), path.display(), listed.join("\n  "), tail);
    }
    if rows.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    if let PeriodBins::Width(w) = bins {
        let lo = rows.iter().map(|(l, _)| l.parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
        for (l, _) in &mut rows {
            let p: f64 = l.parse().unwrap();
            let start = lo + ((p - lo) / w).floor() * w;
            *l = format!("{}-{}", num_label(start), num_label(start + w - 1.0));
        }
    }
    let n_rows = rows.len();
    let mut labels: Vec<String> = Vec::new();
    for (l, _) in &rows {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    if labels.iter().all(|l| l.split('-').next().is_some_and(|a| a.parse::<f64>().is_ok())) {
        let key = |l: &String| l.split('-').next().unwrap().parse::<f64>().unwrap();
        labels.sort_by(|a, b| key(a).total_cmp(&key(b)));
    }
    let mut periods: Vec<PeriodData> =
        labels.iter().map(|l| PeriodData { label: l.clone(), households: Vec::new() }).collect();
    for (l, h) in rows {
        let k = labels.iter().position(|x| *x == l).unwrap();
        periods[k].households.push(h);
    }
    let report = IngestReport { rows: n_rows, violations: 0, periods: periods.iter().map(period_report).collect() };
    Ok((Dataset { periods, x_names: map.x.clone(), z_only_names: map.z_only.clone() }, report))
}

fn period_report(p: &PeriodData) -> PeriodReport {
    let (mut yw, mut yh): (Vec<f64>, Vec<f64>) = p.households.iter().filter_map(|h| Some((h.y_w?, h.y_h?))).unzip();
    yw.sort_by(f64::total_cmp);
    yh.sort_by(f64::total_cmp);
    let dec = |v: &[f64]| {
        if v.is_empty() {
            Vec::new()
        } else {
            (1..10).map(|k| sample_quantile(v, f64::from(k) / 10.0)).collect()
        }
    };
    PeriodReport {
        label: p.label.clone(),
        households: p.households.len(),
        working_couples: yw.len(),
        total_weight: p.households.iter().map(|h| h.weight).sum(),
        deciles_w: dec(&yw),
        deciles_h: dec(&yh),
    }
}

/// Writes households in the input schema, one block per period.
pub fn write_households<'a>(
    path: &Path,
    blocks: impl IntoIterator<Item = (&'a str, &'a [Household])>,
    x_names: &[String],
    z_only_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<&str> = vec!["d_w", "d_h", "y_w", "y_h", "weight", "period"];
    header.extend(x_names.iter().map(String::as_str));
    header.extend(z_only_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let kx = x_names.len();
    for (label, hs) in blocks {
        for h in hs {
            let mut rec = vec![
                u8::from(h.d_w).to_string(),
                u8::from(h.d_h).to_string(),
                h.y_w.map_or_else(String::new, |v| v.to_string()),
                h.y_h.map_or_else(String::new, |v| v.to_string()),
                h.weight.to_string(),
                label.to_string(),
            ];
            rec.extend(h.z_row[1..=kx].iter().map(f64::to_string));
            rec.extend(h.z_row[1 + kx..].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bins() {
        assert_eq!(PeriodBins::parse(None).unwrap(), PeriodBins::Raw);
        assert_eq!(PeriodBins::parse(Some("5")).unwrap(), PeriodBins::Width(5.0));
        assert_eq!(
            PeriodBins::parse(Some("1976-1980, 1981-1985")).unwrap(),
            PeriodBins::Ranges(vec![(1976.0, 1980.0), (1981.0, 1985.0)])
        );
        assert!(PeriodBins::parse(Some("1976-1980,1980-1985")).is_err());
        assert!(PeriodBins::parse(Some("-2")).is_err());
    }

    #[test]
    fn field_parsers() {
        assert_eq!(parse_flag(" 1 "), Ok(true));
        assert!(parse_flag("2").is_err());
        assert_eq!(parse_wage(""), Ok(None));
        assert!(parse_wage("-3").is_err());
        assert!(parse_num("abc").is_err());
    }
}
