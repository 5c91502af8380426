use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DECILES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableSource {
    Empirical,
    Model,
    Counterfactual,
}

/// Joint decile frequencies divided by their value under random sorting, so
/// that independence gives 1 in every cell. Rows index the wife's decile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortingTable {
    pub cells: Vec<Vec<f64>>,
    pub diag_sum: f64,
    /// τ-b on the microdata for empirical tables, grouped τ-b otherwise.
    pub kendall_tau: f64,
    /// Grouped τ-b of the table itself.
    pub kendall_tau_grouped: f64,
    pub source: TableSource,
    /// Monte Carlo standard errors of the cells, when simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<Vec<f64>>>,
}

impl SortingTable {
    /// Builds a table from decile-pair probabilities (which sum to one).
    pub fn from_probabilities(p: &[Vec<f64>], source: TableSource) -> Self {
        let g = p.len();
        let scale = (g * g) as f64;
        let cells: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let diag_sum = (0..g).map(|i| cells[i][i]).sum();
        let tau = kendall_tau_grouped(p);
        Self { cells, diag_sum, kendall_tau: tau, kendall_tau_grouped: tau, source, std_errors: None }
    }

    pub fn size(&self) -> usize {
        self.cells.len()
    }

    pub fn row_means(&self) -> Vec<f64> {
        self.cells.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    pub fn col_means(&self) -> Vec<f64> {
        let g = self.size();
        (0..g).map(|j| self.cells.iter().map(|r| r[j]).sum::<f64>() / g as f64).collect()
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().flatten().sum()
    }
}

/// Midranks (1-based, ties averaged).
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let m = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = m;
        }
        i = j + 1;
    }
    r
}

/// Decile index 0..9 of every value, from its midrank.
pub fn decile_index(v: &[f64]) -> Vec<usize> {
    let n = v.len() as f64;
    midranks(v)
        .into_iter()
        .map(|r| (((r - 0.5) / n * DECILES as f64).floor() as usize).min(DECILES - 1))
        .collect()
}

pub fn empirical_sorting_table(y_w: &[f64], y_h: &[f64]) -> Result<SortingTable> {
    if y_w.len() != y_h.len() {
        return Err(Error::Domain("wage vectors differ in length".into()));
    }
    if y_w.len() < 100 {
        return Err(Error::Domain(format!("a decile table needs at least 100 couples, got {}", y_w.len())));
    }
    let (dw, dh) = (decile_index(y_w), decile_index(y_h));
    let n = y_w.len() as f64;
    let mut p = vec![vec![0.0; DECILES]; DECILES];
    for (&i, &j) in dw.iter().zip(&dh) {
        p[i][j] += 1.0 / n;
    }
    let mut t = SortingTable::from_probabilities(&p, TableSource::Empirical);
    t.kendall_tau = kendall_tau(y_w, y_h)?;
    Ok(t)
}

/// Kendall's τ-b with tie correction, in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Domain("vectors differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Domain("Kendall's tau needs at least two pairs".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let tie_pairs = |keys: &mut dyn Iterator<Item = bool>| -> u64 {
        // `keys` yields whether element k equals element k − 1
        let (mut total, mut run) = (0u64, 1u64);
        for same in keys {
            if same {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let n1 = tie_pairs(&mut (1..n).map(|k| pairs[k].0 == pairs[k - 1].0));
    let n3 = tie_pairs(&mut (1..n).map(|k| pairs[k] == pairs[k - 1]));
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&mut (1..n).map(|k| ys[k] == ys[k - 1]));
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if den == 0.0 {
        return Err(Error::Domain("Kendall's tau undefined for a constant vector".into()));
    }
    Ok(num / den)
}

/// Sorts `v` and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut c = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            c += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    c
}

/// Grouped τ-b of a contingency table of nonnegative masses, treating each
/// cell as tied on both coordinates (population version, total mass 1).
pub fn kendall_tau_grouped(table: &[Vec<f64>]) -> f64 {
    let g = table.len();
    let total: f64 = table.iter().flatten().sum();
    if total <= 0.0 {
        return f64::NAN;
    }
    let p: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|v| v / total).collect()).collect();
    let h = p.first().map_or(0, Vec::len);
    let (mut conc, mut disc) = (0.0, 0.0);
    for i in 0..g {
        for j in 0..h {
            let mut above = 0.0;
            let mut below = 0.0;
            for k in i + 1..g {
                for l in 0..h {
                    if l > j {
                        above += p[k][l];
                    } else if l < j {
                        below += p[k][l];
                    }
                }
            }
            conc += p[i][j] * above;
            disc += p[i][j] * below;
        }
    }
    let rows: f64 = p.iter().map(|r| r.iter().sum::<f64>().powi(2)).sum();
    let cols: f64 = (0..h).map(|j| p.iter().map(|r| r[j]).sum::<f64>().powi(2)).sum();
    2.0 * (conc - disc) / ((1.0 - rows) * (1.0 - cols)).sqrt()
}
