//! Linear sensing operators `A : C^n -> C^m` as seen by the solvers.
//!
//! The solvers never touch `A` entrywise. Everything they need is a product
//! with `A` or `A^*` and weighted Gram matrices `A diag(d) A^*` /
//! `A diag(d) A^T`, which are `m x m` no matter how long `x` is.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub trait SensingOperator: Sync {
    /// Number of measurements `m`.
    fn rows(&self) -> usize;
    /// Number of unknowns `n`.
    fn cols(&self) -> usize;
    /// `A x`.
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
    /// `A^* v`.
    fn adjoint(&self, v: &[Complex64]) -> Vec<Complex64>;
    /// `A diag(d) A^*` for real `d`; Hermitian.
    fn weighted_gram(&self, d: &[f64]) -> DMatrix<Complex64>;
    /// `A diag(d) A^T`; complex symmetric.
    fn weighted_gram_transpose(&self, d: &[Complex64]) -> DMatrix<Complex64>;
    /// Materialized `m x n` matrix.
    fn to_dense(&self) -> DMatrix<Complex64>;
    /// Column `j`.
    fn column(&self, j: usize) -> Vec<Complex64> {
        let mut e = vec![Complex64::new(0.0, 0.0); self.cols()];
        e[j] = Complex64::new(1.0, 0.0);
        self.apply(&e)
    }
}

/// An explicitly stored matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<Complex64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<Complex64>) -> Self {
        DenseOperator { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }
}

impl SensingOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows()];
        for (j, xj) in x.iter().enumerate() {
            if *xj == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.matrix.column(j).iter()) {
                *o += a * xj;
            }
        }
        out
    }

    fn adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.cols())
            .map(|j| {
                self.matrix
                    .column(j)
                    .iter()
                    .zip(v)
                    .map(|(a, vi)| a.conj() * vi)
                    .sum()
            })
            .collect()
    }

    fn weighted_gram(&self, d: &[f64]) -> DMatrix<Complex64> {
        let mut scaled = self.matrix.clone();
        for (j, dj) in d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*dj);
        }
        &scaled * self.matrix.adjoint()
    }

    fn weighted_gram_transpose(&self, d: &[Complex64]) -> DMatrix<Complex64> {
        let mut scaled = self.matrix.clone();
        for (j, dj) in d.iter().enumerate() {
            for v in scaled.column_mut(j).iter_mut() {
                *v *= dj;
            }
        }
        &scaled * self.matrix.transpose()
    }

    fn to_dense(&self) -> DMatrix<Complex64> {
        self.matrix.clone()
    }

    fn column(&self, j: usize) -> Vec<Complex64> {
        self.matrix.column(j).iter().copied().collect()
    }
}
