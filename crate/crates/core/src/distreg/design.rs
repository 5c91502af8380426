use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One transformed covariate: a raw column, its log or square, or a product of two columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Column(String),
    Log(String),
    Square(String),
    Product(String, String),
}

impl Transform {
    /// Parses `name`, `log(name)`, `name^2` or `a*b`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Spec("empty covariate transform".into()));
        }
        if let Some(inner) = s.strip_prefix("log(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Self::Log(inner.trim().to_string()));
        }
        if let Some(base) = s.strip_suffix("^2") {
            return Ok(Self::Square(base.trim().to_string()));
        }
        if let Some((a, b)) = s.split_once('*') {
            return Ok(Self::Product(a.trim().to_string(), b.trim().to_string()));
        }
        Ok(Self::Column(s.to_string()))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Column(c) => c.clone(),
            Self::Log(c) => format!("log({c})"),
            Self::Square(c) => format!("{c}^2"),
            Self::Product(a, b) => format!("{a}*{b}"),
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        match self {
            Self::Column(c) | Self::Log(c) | Self::Square(c) => vec![c.as_str()],
            Self::Product(a, b) => vec![a.as_str(), b.as_str()],
        }
    }

    fn apply(&self, get: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Self::Column(c) => get(c),
            Self::Log(c) => get(c).ln(),
            Self::Square(c) => get(c).powi(2),
            Self::Product(a, b) => get(a) * get(b),
        }
    }
}

/// Covariate transforms for the wage indices (x) and the participation indices (z).
///
/// The intercept is always the first column. The participation design is the wage
/// design followed by the excluded (z-only) transforms, so x-columns are a prefix of
/// z-columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DesignSpec {
    pub x: Vec<Transform>,
    pub z_only: Vec<Transform>,
}

impl DesignSpec {
    pub fn from_names(x: &[&str], z_only: &[&str]) -> Result<Self> {
        Ok(Self {
            x: x.iter().map(|s| Transform::parse(s)).collect::<Result<_>>()?,
            z_only: z_only.iter().map(|s| Transform::parse(s)).collect::<Result<_>>()?,
        })
    }

    pub fn x_names(&self) -> Vec<String> {
        std::iter::once("const".to_string())
            .chain(self.x.iter().map(Transform::label))
            .collect()
    }

    pub fn z_names(&self) -> Vec<String> {
        self.x_names()
            .into_iter()
            .chain(self.z_only.iter().map(Transform::label))
            .collect()
    }

    pub fn raw_columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in self.x.iter().chain(&self.z_only) {
            for c in t.columns() {
                if !out.iter().any(|o| o == c) {
                    out.push(c.to_string());
                }
            }
        }
        out
    }

    /// Builds (x_row, z_row) from a raw-value lookup.
    pub fn rows(&self, get: &dyn Fn(&str) -> f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = vec![1.0];
        for t in &self.x {
            x.push(t.apply(get));
        }
        let mut z = x.clone();
        for t in &self.z_only {
            z.push(t.apply(get));
        }
        if let Some(bad) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Spec(format!(
                "covariate {} is not finite",
                self.z_names()[bad]
            )));
        }
        Ok((x, z))
    }
}

/// A design matrix with column names, used to name offending columns in errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(matrix: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != matrix.ncols() {
            return Err(Error::Spec(format!(
                "{} column names for {} columns",
                names.len(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, names })
    }

    /// Stacks rows; names default to `const, x1, x2, ...`.
    pub fn from_rows(rows: &[Vec<f64>], names: Option<Vec<String>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Spec("design rows of unequal length".into()));
        }
        let matrix = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let names = names.unwrap_or_else(|| {
            (0..k)
                .map(|j| if j == 0 { "const".to_string() } else { format!("x{j}") })
                .collect()
        });
        Self::new(matrix, names)
    }

    pub fn intercept(n: usize) -> Self {
        Self { matrix: DMatrix::from_element(n, 1, 1.0), names: vec!["const".into()] }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn index(&self, i: usize, beta: &[f64]) -> f64 {
        (0..self.ncols()).map(|j| self.matrix[(i, j)] * beta[j]).sum()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            matrix: DMatrix::from_fn(idx.len(), self.ncols(), |i, j| self.matrix[(idx[i], j)]),
            names: self.names.clone(),
        }
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn sample_quantile(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Wage cutoffs per spouse at a common set of τ-levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub levels: Vec<f64>,
    pub cut_w: Vec<f64>,
    pub cut_h: Vec<f64>,
    /// Observed (min, max) wage per spouse in the sample the grid was built from.
    pub range_w: (f64, f64),
    pub range_h: (f64, f64),
}

impl ThresholdGrid {
    /// `size` cutoffs per spouse at the bin midpoints (k − ½)/size, so that cell
    /// (i, j) stands for the pair of i-th and j-th quantile bins.
    pub fn midpoint_levels(size: usize) -> Vec<f64> {
        (1..=size).map(|k| (k as f64 - 0.5) / size as f64).collect()
    }

    pub fn from_sample(y_w: &[f64], y_h: &[f64], size: usize) -> Result<Self> {
        Self::from_sample_at(y_w, y_h, &Self::midpoint_levels(size))
    }

    pub fn from_sample_at(y_w: &[f64], y_h: &[f64], levels: &[f64]) -> Result<Self> {
        if y_w.is_empty() || y_h.is_empty() {
            return Err(Error::Spec("threshold grid from an empty sample".into()));
        }
        let sorted = |y: &[f64]| {
            let mut v = y.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        let (sw, sh) = (sorted(y_w), sorted(y_h));
        let grid = Self {
            levels: levels.to_vec(),
            cut_w: levels.iter().map(|&t| sample_quantile(&sw, t)).collect(),
            cut_h: levels.iter().map(|&t| sample_quantile(&sh, t)).collect(),
            range_w: (sw[0], sw[sw.len() - 1]),
            range_h: (sh[0], sh[sh.len() - 1]),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn size(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Spec("empty threshold grid".into()));
        }
        if self.levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Spec("threshold levels must lie in (0,1)".into()));
        }
        for (name, c) in [("wife", &self.cut_w), ("husband", &self.cut_h)] {
            if c.len() != self.levels.len() {
                return Err(Error::Spec(format!("{name} cutoffs do not match the levels")));
            }
            if c.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Spec(format!("{name} cutoffs are not strictly increasing")));
            }
        }
        Ok(())
    }
}
