//! Linearized recovery-error model.
//!
//! Around the smoothed-l0 fixed point the recovery error is `v = D e` with
//!
//! ```text
//! D = [P + A^* A]^{-1} A^*,    P = W_sigma(x) / (lambda sigma^2) (I - diag(|x|^2 / sigma^2))
//! ```
//!
//! so the energy of block `i` of `v` is a weighted sum of exponentials with
//! weights `sigma_e^2 * eig(Sigma_i)`, `Sigma_i = sum_{t in block i} d_t d_t^*`
//! and `d_t^*` the rows of `D`.
//!
//! Entries where `P` is negligible against the data term (all entries with
//! `|x_t| >= sigma`, whose `P` is clamped) are treated as unregularized.
//! Eliminating them exactly gives, with `A_S` their columns,
//! `Pi` the projector onto the orthogonal complement of `range(A_S)`,
//! `G = A_R P_R^{-1} A_R^*` over the regularized entries and
//! `K = Pi (I + Pi G Pi)^{-1} Pi`:
//!
//! ```text
//! D_R = P_R^{-1} A_R^* K,    D_S = A_S^+ (I - G K)
//! ```
//!
//! This avoids forming `[I + A P^{-1} A^*]^{-1}` with `P^{-1}` near `1e10`,
//! which loses all precision.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{RangingError, Result};
use crate::isl0::{f_sigma, WEIGHT_FLOOR};
use crate::linalg::{hermitize, hpd_inverse};
use crate::operator::SensingOperator;

/// Floor on the diagonal of `P`.
pub const P_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ErrorModelOptions {
    /// Use `P = W / (lambda sigma^2)` without the curvature factor.
    pub drop_curvature: bool,
    /// An entry counts as unregularized when `P_t <= free_ratio ||a_t||^2`.
    pub free_ratio: f64,
}

impl Default for ErrorModelOptions {
    fn default() -> Self {
        ErrorModelOptions {
            drop_curvature: false,
            free_ratio: 1e-6,
        }
    }
}

/// Per-block spectra, `Lambda[i]` sorted descending, and the noise variance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorModelBlocks {
    pub lambda: Vec<Vec<f64>>,
    pub sigma_e2: f64,
}

/// The factored error model with lazily computed block spectra.
pub struct ErrorModel {
    blocks: usize,
    block_len: usize,
    sigma_e2: f64,
    /// `K` (M x M).
    k: DMatrix<Complex64>,
    /// `K^2`, for traces.
    k2: DMatrix<Complex64>,
    /// Squared `P^{-1}` on regularized entries, zero on free ones.
    p_inv2: Vec<f64>,
    /// Rows of `D_S` grouped by block (`|S_i| x M`).
    free_rows: Vec<DMatrix<Complex64>>,
    gram: Vec<OnceLock<DMatrix<Complex64>>>,
    spectra: Vec<OnceLock<Vec<f64>>>,
}

impl std::fmt::Debug for ErrorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ErrorModel")
            .field("blocks", &self.blocks)
            .field("block_len", &self.block_len)
            .field("sigma_e2", &self.sigma_e2)
            .field(
                "free_entries",
                &self.free_rows.iter().map(|r| r.nrows()).sum::<usize>(),
            )
            .finish()
    }
}

/// Diagonal of `P` for the plug-in estimate `x`, clamped at [`P_FLOOR`].
pub fn p_diagonal(x: &[Complex64], lambda: f64, sigma: f64, drop_curvature: bool) -> Vec<f64> {
    let s2 = sigma * sigma;
    x.iter()
        .map(|v| {
            let w = f_sigma(v.norm(), sigma).max(WEIGHT_FLOOR) / (lambda * s2);
            let p = if drop_curvature {
                w
            } else {
                w * (1.0 - v.norm_sqr() / s2)
            };
            p.max(P_FLOOR)
        })
        .collect()
}

/// Builds the error model for blocks of length `block_len`.
pub fn build_error_model<A: SensingOperator + ?Sized>(
    x_bar: &[Complex64],
    op: &A,
    block_len: usize,
    lambda: f64,
    sigma: f64,
    sigma_e2: f64,
    options: &ErrorModelOptions,
) -> Result<ErrorModel> {
    let n = op.cols();
    let m = op.rows();
    if x_bar.len() != n || block_len == 0 || !n.is_multiple_of(block_len) {
        return Err(RangingError::Dimension {
            what: "x_bar",
            got: x_bar.len(),
            expected: n,
        });
    }
    if !(sigma > 0.0 && lambda > 0.0 && sigma_e2 >= 0.0) || x_bar.iter().any(|v| !v.is_finite()) {
        return Err(RangingError::numerical(
            "detector",
            0,
            "non-finite or non-positive error-model inputs",
        ));
    }
    let blocks = n / block_len;
    let p = p_diagonal(x_bar, lambda, sigma, options.drop_curvature);

    let mut free = Vec::new();
    let mut p_inv = vec![0.0; n];
    for (t, pt) in p.iter().enumerate() {
        let col_norm2: f64 = op.column(t).iter().map(|v| v.norm_sqr()).sum();
        if *pt <= options.free_ratio * col_norm2 {
            free.push(t);
        } else {
            p_inv[t] = 1.0 / pt;
        }
    }

    let identity = DMatrix::<Complex64>::identity(m, m);
    // projector onto range(A_S)^perp and the pseudo-inverse of A_S
    let (proj, pinv) = if free.is_empty() {
        (identity.clone(), DMatrix::zeros(0, m))
    } else {
        let cols: Vec<Complex64> = free.iter().flat_map(|&t| op.column(t)).collect();
        let a_s = DMatrix::from_column_slice(m, free.len(), &cols);
        let svd = a_s.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => {
                return Err(RangingError::numerical(
                    "detector",
                    0,
                    "SVD of the free columns failed",
                ))
            }
        };
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let cutoff = 1e-10 * smax * (m.max(free.len()) as f64);
        let mut proj = identity.clone();
        let mut pinv = DMatrix::<Complex64>::zeros(free.len(), m);
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s <= cutoff {
                continue;
            }
            let uk = u.column(k);
            let vk = v_t.row(k).adjoint();
            proj -= uk * uk.adjoint();
            pinv += (&vk * uk.adjoint()) * Complex64::new(1.0 / s, 0.0);
        }
        hermitize(&mut proj);
        (proj, pinv)
    };

    let g = op.weighted_gram(&p_inv);
    let mut inner = &proj * &g * &proj;
    for i in 0..m {
        inner[(i, i)] += Complex64::new(1.0, 0.0);
    }
    hermitize(&mut inner);
    let inner_inv = hpd_inverse(&inner)
        .ok_or_else(|| RangingError::numerical("detector", 0, "error-model system is singular"))?;
    let mut k = &proj * inner_inv * &proj;
    hermitize(&mut k);
    let mut k2 = &k * &k;
    hermitize(&mut k2);

    let mut free_rows: Vec<Vec<usize>> = vec![Vec::new(); blocks];
    for (row, &t) in free.iter().enumerate() {
        free_rows[t / block_len].push(row);
    }
    let free_rows = if free.is_empty() {
        vec![DMatrix::zeros(0, m); blocks]
    } else {
        let c = &identity - &g * &k;
        let d_s = &pinv * c;
        free_rows
            .iter()
            .map(|rows| DMatrix::from_fn(rows.len(), m, |r, j| d_s[(rows[r], j)]))
            .collect()
    };

    let model = ErrorModel {
        blocks,
        block_len,
        sigma_e2,
        k,
        k2,
        p_inv2: p_inv.iter().map(|v| v * v).collect(),
        free_rows,
        gram: (0..blocks).map(|_| OnceLock::new()).collect(),
        spectra: (0..blocks).map(|_| OnceLock::new()).collect(),
    };
    if model.k.iter().any(|v| !v.is_finite()) {
        return Err(RangingError::numerical(
            "detector",
            0,
            "error model is not finite",
        ));
    }
    Ok(model)
}

impl ErrorModel {
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn sigma_e2(&self) -> f64 {
        self.sigma_e2
    }

    /// Replaces the noise variance; the spectra do not depend on it.
    pub fn set_sigma_e2(&mut self, sigma_e2: f64) {
        self.sigma_e2 = sigma_e2;
    }

    /// `E ||y - A x_bar||^2 / sigma_e^2` under the model. The residual map
    /// `I - A D` equals `K`, so this is `tr(K^2)`.
    pub fn residual_gain(&self) -> f64 {
        (0..self.k2.nrows()).map(|i| self.k2[(i, i)].re).sum()
    }

    /// `Var ||y - A x_bar||^2 / sigma_e^4` under the model, `tr(K^4)`.
    pub fn residual_gain_sq(&self) -> f64 {
        self.k2.norm_squared()
    }

    /// Number of unregularized entries in block `i`.
    pub fn free_in_block(&self, i: usize) -> usize {
        self.free_rows[i].nrows()
    }

    fn gram<A: SensingOperator + ?Sized>(&self, op: &A, i: usize) -> &DMatrix<Complex64> {
        self.gram[i].get_or_init(|| {
            let mut d = vec![0.0; op.cols()];
            let range = i * self.block_len..(i + 1) * self.block_len;
            d[range.clone()].copy_from_slice(&self.p_inv2[range]);
            op.weighted_gram(&d)
        })
    }

    /// `Sigma_i = K R_i K + D_{S,i}^* D_{S,i}`.
    pub fn block_covariance<A: SensingOperator + ?Sized>(
        &self,
        op: &A,
        i: usize,
    ) -> DMatrix<Complex64> {
        let r = self.gram(op, i);
        let mut sigma = &self.k * r * &self.k;
        let rows = &self.free_rows[i];
        if rows.nrows() > 0 {
            sigma += rows.adjoint() * rows;
        }
        hermitize(&mut sigma);
        sigma
    }

    /// Error variance of each entry of block `i` per unit noise variance,
    /// `||d_t||^2`.
    pub fn entry_variances<A: SensingOperator + ?Sized>(&self, op: &A, i: usize) -> Vec<f64> {
        let rows = &self.free_rows[i];
        let mut next_free = 0;
        (i * self.block_len..(i + 1) * self.block_len)
            .map(|t| {
                if self.p_inv2[t] > 0.0 {
                    let a = DVector::from_vec(op.column(t));
                    self.p_inv2[t] * (a.adjoint() * &self.k2 * &a)[(0, 0)].re.max(0.0)
                } else {
                    let v = rows.row(next_free).norm_squared();
                    next_free += 1;
                    v
                }
            })
            .collect()
    }

    /// `Lambda[i]`, descending, negatives from rounding set to zero.
    pub fn spectrum<A: SensingOperator + ?Sized>(&self, op: &A, i: usize) -> &[f64] {
        self.spectra[i].get_or_init(|| {
            let mut ev: Vec<f64> = self
                .block_covariance(op, i)
                .symmetric_eigenvalues()
                .iter()
                .map(|v| v.max(0.0))
                .collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            ev
        })
    }

    /// `trace(Sigma_i)` without forming `Sigma_i`.
    pub fn trace<A: SensingOperator + ?Sized>(&self, op: &A, i: usize) -> f64 {
        let r = self.gram(op, i);
        // tr(K R K) = tr(R K^2) = sum_jk R[j,k] K2[k,j]
        let mut t = 0.0;
        for j in 0..r.ncols() {
            for k in 0..r.nrows() {
                t += (r[(j, k)] * self.k2[(k, j)]).re;
            }
        }
        t + self.free_rows[i].iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// A lower bound on the largest eigenvalue of `Sigma_i` (a Rayleigh
    /// quotient after a few power iterations).
    pub fn max_eigenvalue_lower<A: SensingOperator + ?Sized>(&self, op: &A, i: usize) -> f64 {
        if let Some(ev) = self.spectra[i].get() {
            return ev.first().copied().unwrap_or(0.0);
        }
        let r = self.gram(op, i);
        let rows = &self.free_rows[i];
        let m = self.k.nrows();
        let apply = |v: &DVector<Complex64>| -> DVector<Complex64> {
            let mut out = &self.k * (r * (&self.k * v));
            if rows.nrows() > 0 {
                out += rows.adjoint() * (rows * v);
            }
            out
        };
        // start from the largest diagonal entry direction mixed with a flat vector
        let mut v = DVector::from_fn(m, |j, _| Complex64::new(1.0 + (j % 7) as f64 * 0.1, 0.0));
        let mut rq = 0.0;
        for _ in 0..12 {
            let nv = v.norm();
            if nv == 0.0 {
                return 0.0;
            }
            v /= Complex64::new(nv, 0.0);
            let w = apply(&v);
            rq = v.dotc(&w).re;
            v = w;
        }
        rq.max(0.0)
    }

    /// Materializes every block spectrum.
    pub fn to_blocks<A: SensingOperator + ?Sized>(&self, op: &A) -> ErrorModelBlocks {
        ErrorModelBlocks {
            lambda: (0..self.blocks)
                .map(|i| self.spectrum(op, i).to_vec())
                .collect(),
            sigma_e2: self.sigma_e2,
        }
    }
}
