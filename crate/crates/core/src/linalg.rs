//! Spectral helpers for symmetric matrices.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{arg, Error, Result};

/// Default relative eigenvalue cut-off for the generalized inverse.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(arg(format!("matrix must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = 1.0 + max_abs(m);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(arg(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenpairs retained by the relative cut-off, largest eigenvalue first.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn rank(&self) -> usize {
        self.values.len()
    }
}

/// Eigenvalues `<= tol * max eigenvalue` are discarded.
pub fn retained_spectrum(m: &DMatrix<f64>, tol: f64) -> Result<Spectrum> {
    if !(tol > 0.0) {
        return Err(arg(format!("rank tolerance must be positive, got {tol}")));
    }
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let keep: Vec<usize> = if top > 0.0 {
        order.into_iter().filter(|&i| eig.eigenvalues[i] > tol * top).collect()
    } else {
        Vec::new()
    };
    let values = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<DVector<f64>> = keep.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let vectors = if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(Spectrum { values, vectors })
}

/// Spectral Moore-Penrose inverse of a symmetric matrix and its numerical rank.
pub fn generalized_inverse(m: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let sp = retained_spectrum(m, tol)?;
    let inv_vals = DMatrix::from_diagonal(&DVector::from_iterator(sp.rank(), sp.values.iter().map(|v| 1.0 / v)));
    let inv = &sp.vectors * inv_vals * sp.vectors.transpose();
    Ok((inv, sp.rank()))
}

/// `F` with `F F^T = m` for a PSD matrix. Eigenvalues in `[-neg_tol, 0)` are
/// clipped to zero; anything more negative is an error.
pub fn psd_factor(m: &DMatrix<f64>, neg_tol: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut f = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -neg_tol {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite (eigenvalue {lam:e})"
            )));
        }
        let s = libm::sqrt(lam.max(0.0));
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}
