use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest eigenvalue a correlation matrix must exceed to count as positive definite.
pub const PD_EPS: f64 = 1e-8;

pub const MAX_DIM: usize = 4;

/// A symmetric, unit-diagonal, positive definite correlation matrix of dimension ≤ 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: [[f64; MAX_DIM]; MAX_DIM],
}

impl CorrelationMatrix {
    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut entries = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in entries.iter_mut().enumerate().take(dim) {
            row[i] = 1.0;
        }
        Ok(Self { dim, entries })
    }

    /// Validates and wraps a full square matrix given as rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        let mut entries = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Matrix(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            entries[i][..dim].copy_from_slice(row);
        }
        let m = Self { dim, entries };
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix from its strictly-upper-triangular entries in row order
    /// ((0,1), (0,2), ..., (dim-2, dim-1)).
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        let m = Self::from_upper_unvalidated(dim, upper)?;
        m.validate()?;
        Ok(m)
    }

    pub(crate) fn from_upper_unvalidated(dim: usize, upper: &[f64]) -> Result<Self> {
        check_dim(dim)?;
        if upper.len() != dim * (dim - 1) / 2 {
            return Err(Error::Matrix(format!(
                "dimension {dim} needs {} off-diagonal entries, got {}",
                dim * (dim - 1) / 2,
                upper.len()
            )));
        }
        let mut entries = [[0.0; MAX_DIM]; MAX_DIM];
        let mut idx = 0;
        for i in 0..dim {
            entries[i][i] = 1.0;
            for j in (i + 1)..dim {
                entries[i][j] = upper[idx];
                entries[j][i] = upper[idx];
                idx += 1;
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn equicorrelated(dim: usize, rho: f64) -> Result<Self> {
        Self::from_upper(dim, &vec![rho; dim * (dim - 1) / 2])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.entries[i][..self.dim].to_vec())
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.to_dmatrix())
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entries[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for i in 0..d {
            if self.entries[i][i] != 1.0 {
                return Err(Error::Matrix(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                let v = self.entries[i][j];
                if !v.is_finite() || v != self.entries[j][i] {
                    return Err(Error::Matrix(format!("entry ({i},{j}) not symmetric/finite")));
                }
                if v.abs() >= 1.0 {
                    return Err(Error::Matrix(format!("|rho({i},{j})| = {} ≥ 1", v.abs())));
                }
            }
        }
        let ev = self.min_eigenvalue();
        if !(ev > PD_EPS) {
            return Err(Error::Matrix(format!(
                "not positive definite (min eigenvalue {ev:.3e})"
            )));
        }
        Ok(())
    }

    /// Lower-triangular Cholesky factor.
    pub fn cholesky(&self) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
        cholesky(&self.entries, self.dim)
    }

    /// Restricts to the listed dimensions, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        check_dim(idx.len())?;
        let mut entries = [[0.0; MAX_DIM]; MAX_DIM];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                if i >= self.dim || j >= self.dim {
                    return Err(Error::Domain(format!("index out of range for dim {}", self.dim)));
                }
                entries[a][b] = self.entries[i][j];
            }
        }
        Ok(Self { dim: idx.len(), entries })
    }

    /// Negates row and column `k` (the correlation structure of −X_k).
    pub fn flip(&self, k: usize) -> Self {
        let mut out = *self;
        for j in 0..self.dim {
            if j != k {
                out.entries[k][j] = -out.entries[k][j];
                out.entries[j][k] = -out.entries[j][k];
            }
        }
        out
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Matrix(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn cholesky(
    a: &[[f64; MAX_DIM]; MAX_DIM],
    dim: usize,
) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
    let mut l = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Matrix(format!(
                        "Cholesky failed at pivot {i} (value {s:.3e})"
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Outcome of [`project_to_pd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub matrix: CorrelationMatrix,
    /// Largest absolute change of any entry.
    pub max_change: f64,
}

impl Projection {
    pub fn changed(&self) -> bool {
        self.max_change > 1e-6
    }
}

/// Nearest unit-diagonal PD matrix by eigenvalue clipping and diagonal renormalization.
///
/// `rows` must be symmetric with unit diagonal. Input that is already PD (smallest
/// eigenvalue ≥ `pd_eps`) is returned unchanged.
pub fn project_to_pd(rows: &[Vec<f64>], pd_eps: f64) -> Result<Projection> {
    let dim = rows.len();
    check_dim(dim)?;
    let orig = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    for i in 0..dim {
        if rows[i].len() != dim {
            return Err(Error::Matrix("matrix is not square".into()));
        }
        for j in 0..dim {
            if !orig[(i, j)].is_finite() || (orig[(i, j)] - orig[(j, i)]).abs() > 1e-12 {
                return Err(Error::Matrix(format!("entry ({i},{j}) not symmetric/finite")));
            }
        }
    }
    let mut m = orig.clone();
    for i in 0..dim {
        m[(i, i)] = 1.0;
    }
    let pack = |m: &DMatrix<f64>| {
        let mut entries = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                entries[i][j] = if i == j { 1.0 } else { 0.5 * (m[(i, j)] + m[(j, i)]) };
            }
        }
        CorrelationMatrix { dim, entries }
    };
    let off_ok = |m: &DMatrix<f64>| {
        (0..dim).all(|i| (0..dim).all(|j| i == j || m[(i, j)].abs() < 1.0))
    };
    if min_eigenvalue(&m) >= pd_eps && off_ok(&m) {
        return Ok(Projection { matrix: pack(&m), max_change: 0.0 });
    }
    let mut floor = pd_eps;
    for _ in 0..200 {
        let eig = SymmetricEigen::new(m.clone());
        let clipped = eig.eigenvalues.map(|v| v.max(floor));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let scale: Vec<f64> = (0..dim).map(|i| rebuilt[(i, i)].sqrt()).collect();
        m = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                1.0
            } else {
                rebuilt[(i, j)] / (scale[i] * scale[j])
            }
        });
        m = (&m + m.transpose()) * 0.5;
        if min_eigenvalue(&m) >= pd_eps && off_ok(&m) {
            let matrix = pack(&m);
            let max_change = (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| (matrix.entries[i][j] - orig[(i, j)]).abs())
                .fold(0.0, f64::max);
            return Ok(Projection { matrix, max_change });
        }
        floor *= 2.0;
    }
    Err(Error::Matrix("projection to a PD correlation matrix did not converge".into()))
}
