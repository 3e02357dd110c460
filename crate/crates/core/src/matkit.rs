//! Dense symmetric-matrix helpers shared by every other module.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative rank tolerance for pseudoinverses and rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// A dense real symmetric matrix. Construction averages `M` and `M'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m`; rejects non-square or non-finite input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigen-decomposition `M = U diag(values) U'` with values sorted descending.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.vectors;
        u * DMatrix::from_diagonal(&self.values) * u.transpose()
    }
}

/// Symmetric eigen-decomposition, eigenvalues in descending order.
pub fn sym_eig(m: &SymMatrix) -> EigDecomposition {
    eig_desc(m.as_matrix())
}

/// Moore-Penrose pseudoinverse; eigenvalues with magnitude below
/// `rank_tol * max(1, max|lambda|)` are treated as zero.
pub fn pinv(m: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidInput("rank_tol must be positive".into()));
    }
    Ok(SymMatrix(pinv_sym(m.as_matrix(), rank_tol)))
}

/// `max(0, -lambda_min(M))`, with round-off sized negatives reported as zero.
pub fn psd_distance(m: &SymMatrix) -> f64 {
    psd_dist(m.as_matrix())
}

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`, sorted descending.
pub fn eig_desc(m: &DMatrix<f64>) -> EigDecomposition {
    let n = m.nrows();
    if n == 0 {
        return EigDecomposition {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let se = SymmetricEigen::new(symmetrize(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(i));
    }
    EigDecomposition { values, vectors }
}

fn spectral_scale(values: &DVector<f64>) -> f64 {
    values.iter().fold(1.0f64, |a, v| a.max(v.abs()))
}

/// Pseudoinverse of the symmetric part of `m`.
pub fn pinv_sym(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let e = eig_desc(m);
    let cut = rank_tol * spectral_scale(&e.values);
    let inv = e
        .values
        .map(|v| if v.abs() > cut { 1.0 / v } else { 0.0 });
    let u = &e.vectors;
    symmetrize(&(u * DMatrix::from_diagonal(&inv) * u.transpose()))
}

/// Numerical rank of the symmetric part of `m`.
pub fn rank_sym(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    let e = eig_desc(m);
    let cut = rank_tol * spectral_scale(&e.values);
    e.values.iter().filter(|v| v.abs() > cut).count()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

/// PSD residual of the symmetric part of `m`.
pub fn psd_dist(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lmin = ev.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let noise = 64.0 * f64::EPSILON * spectral_scale(&ev);
    if -lmin <= noise {
        0.0
    } else {
        -lmin
    }
}

/// Nearest PSD matrix in Frobenius norm.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = eig_desc(m);
    let u = &e.vectors;
    let d = e.values.map(|v| v.max(0.0));
    symmetrize(&(u * DMatrix::from_diagonal(&d) * u.transpose()))
}

/// Symmetric PSD square root (negative eigenvalues clipped).
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = eig_desc(m);
    let u = &e.vectors;
    let d = e.values.map(|v| v.max(0.0).sqrt());
    symmetrize(&(u * DMatrix::from_diagonal(&d) * u.transpose()))
}

/// `m^p` for a square matrix and non-negative integer `p`.
pub fn mat_pow(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), (b.nrows(), b.ncols())).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

/// `Tr{A B}` without forming the product.
pub fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Frobenius norm.
pub fn fro(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
