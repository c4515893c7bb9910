//! Small linear algebra kernels: a banded Cholesky for the cell-pressure
//! systems and dense helpers built on faer.
//!
//! The TPFA pressure matrix of an nx-by-ny tensor grid is pentadiagonal
//! with half bandwidth min(nx, ny) when cells are numbered along the
//! shorter axis first, so a band factorization is exact (no fill outside
//! the band) and the factor is reused across many right-hand sides.

use faer::prelude::*;
use faer::Side;

use crate::error::{Error, Result};

/// Symmetric positive definite band matrix, lower band stored row-wise.
///
/// Row `i` holds columns `i-bw ..= i` at offsets `j - i + bw` of the
/// `bw + 1` slots reserved per row.
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at (i, j); only the lower triangle is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place Cholesky factorization A = L L^T.
    ///
    /// Fails when a pivot is not strictly positive, which signals a
    /// singular (pure Neumann without constraint) or indefinite system.
    pub fn factor(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let sum = {
                    let kstart = lo.max(j.saturating_sub(bw));
                    let len = j - kstart;
                    let mut s = self.data[i * w + (j + bw - i)];
                    if len > 0 {
                        let ri = &self.data[i * w + (kstart + bw - i)..i * w + (j + bw - i)];
                        let rj = &self.data[j * w + (kstart + bw - j)..j * w + (j + bw - j)];
                        let mut acc = 0.0;
                        for (a, b) in ri.iter().zip(rj.iter()) {
                            acc += a * b;
                        }
                        s -= acc;
                    }
                    s
                };
                if j < i {
                    let d = self.data[j * w + bw];
                    self.data[i * w + (j + bw - i)] = sum / d;
                } else {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::Dense(format!(
                            "band Cholesky pivot {sum:.3e} at row {i} of {n}"
                        )));
                    }
                    self.data[i * w + bw] = sum.sqrt();
                }
            }
        }
        Ok(BandCholesky {
            n,
            bw,
            l: self.data,
        })
    }
}

/// Factorized band matrix; solves are two triangular band sweeps.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let bw = self.bw;
        let w = bw + 1;
        // forward: L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w + (lo + bw - i)..i * w + bw];
            let mut s = x[i];
            for (lik, xk) in row.iter().zip(x[lo..i].iter()) {
                s -= lik * xk;
            }
            x[i] = s / self.l[i * w + bw];
        }
        // backward: L^T x = y, column sweep over rows of L
        for i in (0..self.n).rev() {
            let xi = x[i] / self.l[i * w + bw];
            x[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w + (lo + bw - i)..i * w + bw];
            for (lik, xk) in row.iter().zip(x[lo..i].iter_mut()) {
                *xk -= lik * xi;
            }
        }
    }
}

/// Column vector of a dense matrix as a Vec.
pub fn mat_col_to_vec(m: &Mat<f64>, col: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, col)]).collect()
}

/// Dense matrix from a slice interpreted as one column.
pub fn col_mat(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Frobenius norm.
pub fn fro_norm(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Smallest eigenvalue of the symmetric pencil (S, N) with N SPD.
///
/// Reduces to the standard problem L^{-1} S L^{-T} with N = L L^T and
/// returns the smallest eigenvalue, clamped at zero from below when the
/// reduction shows S to be numerically singular.
pub fn min_generalized_eigenvalue(s: &Mat<f64>, n_gram: &Mat<f64>) -> Result<f64> {
    let n = s.nrows();
    assert_eq!(s.ncols(), n);
    assert_eq!(n_gram.nrows(), n);
    if n == 0 {
        return Ok(0.0);
    }
    let llt = n_gram
        .llt(Side::Lower)
        .map_err(|e| Error::Dense(format!("gram Cholesky: {e:?}")))?;
    let l = llt.L();
    // c = L^{-1} S L^{-T}
    let mut c = s.clone();
    l.solve_lower_triangular_in_place(c.as_mut());
    let mut ct = c.transpose().to_owned();
    l.solve_lower_triangular_in_place(ct.as_mut());
    // symmetrize against roundoff
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let eigs = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Dense(format!("eigenvalues: {e:?}")))?;
    Ok(eigs[0])
}

/// Eigenvalue range (min, max) of a symmetric dense matrix.
pub fn symmetric_eig_range(a: &Mat<f64>) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let eigs = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Dense(format!("eigenvalues: {e:?}")))?;
    Ok((eigs[0], eigs[n - 1]))
}
