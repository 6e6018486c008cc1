//! Smoothed-l0 refinement.
//!
//! Minimizes `L_sigma(x) = -F_sigma(x) + lambda/2 ||y - A x||^2` for a
//! decreasing sequence of `sigma`, moving along `zeta(x) - x` with
//! backtracking, where `zeta` is the fixed-point map
//!
//! ```text
//! zeta(x) = lambda [W/sigma^2 + lambda A^* A]^{-1} A^* y
//!         = W^{-1} A^* [I/(lambda sigma^2) + A W^{-1} A^*]^{-1} y
//! ```
//!
//! The second form only needs an `M x M` solve.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RangingError, Result};
use crate::linalg::{hpd_solve, norm, norm_inf, norm_sqr, sub};
use crate::operator::SensingOperator;

/// Floor applied to the weights before inversion.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Backtracking gives up below this step.
const BETA_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sl0Params {
    pub lambda: f64,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub sigma0: f64,
    pub sigma_st: f64,
    /// Cap on accepted steps per `sigma` epoch.
    pub max_inner: usize,
}

impl Default for Sl0Params {
    fn default() -> Self {
        Sl0Params {
            lambda: 1.0,
            rho: 0.3,
            eta: 0.5,
            gamma: 0.5,
            sigma0: 1e-3,
            sigma_st: 1.0,
            max_inner: 50,
        }
    }
}

impl Sl0Params {
    /// Defaults with `lambda = 0.1 ||A^* y||_inf`.
    pub fn for_measurement<A: SensingOperator + ?Sized>(op: &A, y: &[Complex64]) -> Self {
        Sl0Params {
            lambda: default_lambda(op, y),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && (0.0..1.0).contains(&self.rho)
            && self.rho > 0.0
            && (0.0..1.0).contains(&self.eta)
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.sigma0 > 0.0
            && self.sigma_st > 0.0
            && self.max_inner > 0;
        if ok {
            Ok(())
        } else {
            Err(RangingError::InvalidConfig(format!(
                "invalid smoothed-l0 parameters {self:?}"
            )))
        }
    }
}

/// `0.1 ||A^* y||_inf`, floored so that a zero measurement still gives a
/// usable weight.
pub fn default_lambda<A: SensingOperator + ?Sized>(op: &A, y: &[Complex64]) -> f64 {
    (0.1 * norm_inf(&op.adjoint(y))).max(1e-12)
}

/// `exp(-a^2 / (2 sigma^2))`.
pub fn f_sigma(a: f64, sigma: f64) -> f64 {
    (-(a * a) / (2.0 * sigma * sigma)).exp()
}

/// `sum_t f_sigma(|x_t|)`.
pub fn big_f(x: &[Complex64], sigma: f64) -> f64 {
    x.iter().map(|v| f_sigma(v.norm(), sigma)).sum()
}

/// Diagonal of `W_sigma(x)`.
pub fn weights(x: &[Complex64], sigma: f64) -> Vec<f64> {
    x.iter().map(|v| f_sigma(v.norm(), sigma)).collect()
}

/// `L_sigma(x)`.
pub fn objective<A: SensingOperator + ?Sized>(
    x: &[Complex64],
    sigma: f64,
    op: &A,
    y: &[Complex64],
    lambda: f64,
) -> f64 {
    -big_f(x, sigma) + 0.5 * lambda * norm_sqr(&sub(y, &op.apply(x)))
}

/// `L_sigma` given a precomputed residual `y - A x`.
fn objective_with_residual(x: &[Complex64], r: &[Complex64], sigma: f64, lambda: f64) -> f64 {
    -big_f(x, sigma) + 0.5 * lambda * norm_sqr(r)
}

/// Dense evaluation of `zeta` through the `n x n` system. Only for small
/// problems.
pub fn zeta_dense<A: SensingOperator + ?Sized>(
    x: &[Complex64],
    sigma: f64,
    op: &A,
    y: &[Complex64],
    lambda: f64,
) -> Result<Vec<Complex64>> {
    let a = op.to_dense();
    let w = weights(x, sigma);
    let mut lhs = a.adjoint() * &a * Complex64::new(lambda, 0.0);
    for (i, wi) in w.iter().enumerate() {
        lhs[(i, i)] += Complex64::new(wi / (sigma * sigma), 0.0);
    }
    let rhs = a.adjoint() * DVector::from_column_slice(y) * Complex64::new(lambda, 0.0);
    hpd_solve(&lhs, &rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| RangingError::numerical("isl0", 0, "dense zeta system is singular"))
}

/// `zeta` through the `M x M` system: one weighted Gram matrix, one
/// Cholesky solve and one adjoint product.
pub fn zeta_fast<A: SensingOperator + ?Sized>(
    x: &[Complex64],
    sigma: f64,
    op: &A,
    y: &[Complex64],
    lambda: f64,
) -> Result<Vec<Complex64>> {
    let inv_w: Vec<f64> = weights(x, sigma)
        .iter()
        .map(|w| 1.0 / w.max(WEIGHT_FLOOR))
        .collect();
    let mut r: DMatrix<Complex64> = op.weighted_gram(&inv_w);
    let shift = 1.0 / (lambda * sigma * sigma);
    for i in 0..r.nrows() {
        r[(i, i)] += Complex64::new(shift, 0.0);
    }
    let z = hpd_solve(&r, &DVector::from_column_slice(y))
        .ok_or_else(|| RangingError::numerical("isl0", 0, "zeta system is singular"))?;
    let back = op.adjoint(z.as_slice());
    Ok(back.iter().zip(&inv_w).map(|(v, iw)| v * *iw).collect())
}

/// One `sigma` epoch of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub sigma: f64,
    pub inner_iterations: usize,
    pub objective: f64,
    /// Entries with magnitude above `3 sigma`.
    pub support: usize,
    /// Set when backtracking stalled and the epoch ended early.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sl0Result {
    pub x: Vec<Complex64>,
    pub epochs: Vec<EpochTrace>,
    pub zeta_calls: usize,
    /// Accepted steps that increased `L_sigma`. Always zero unless the
    /// line search is broken.
    pub descent_violations: usize,
    /// Smallest `sigma` processed.
    pub final_sigma: f64,
}

/// Runs the decreasing-`sigma` schedule from `x0`.
pub fn sl0_solve<A: SensingOperator + ?Sized>(
    x0: &[Complex64],
    op: &A,
    y: &[Complex64],
    params: &Sl0Params,
) -> Result<Sl0Result> {
    params.validate()?;
    if x0.len() != op.cols() {
        return Err(RangingError::Dimension {
            what: "x0",
            got: x0.len(),
            expected: op.cols(),
        });
    }
    let lambda = params.lambda;
    let mut x = x0.to_vec();
    let mut resid = sub(y, &op.apply(&x));
    let mut sigma = params.sigma_st.max(params.sigma0);
    let mut out = Sl0Result {
        x: Vec::new(),
        epochs: Vec::new(),
        zeta_calls: 0,
        descent_violations: 0,
        final_sigma: sigma,
    };

    while sigma >= params.sigma0 {
        let mut inner = 0;
        let mut stalled = false;
        let mut current = objective_with_residual(&x, &resid, sigma, lambda);
        while inner < params.max_inner {
            let zeta = zeta_fast(&x, sigma, op, y, lambda).map_err(|e| match e {
                RangingError::Numerical { stage, reason, .. } => RangingError::Numerical {
                    stage,
                    iteration: out.zeta_calls,
                    reason,
                },
                other => other,
            })?;
            out.zeta_calls += 1;
            let dir = sub(&zeta, &x);
            let a_dir = op.apply(&dir);
            let mut beta = 1.0;
            let accepted = loop {
                let cand: Vec<Complex64> = x.iter().zip(&dir).map(|(x, d)| x + d * beta).collect();
                let cand_r: Vec<Complex64> = resid
                    .iter()
                    .zip(&a_dir)
                    .map(|(r, d)| r - d * beta)
                    .collect();
                let val = objective_with_residual(&cand, &cand_r, sigma, lambda);
                if val <= current {
                    break Some((cand, cand_r, val));
                }
                beta *= params.gamma;
                if beta < BETA_MIN {
                    break None;
                }
            };
            let Some((cand, cand_r, val)) = accepted else {
                stalled = true;
                break;
            };
            if val > current {
                out.descent_violations += 1;
            }
            inner += 1;
            let step = beta * norm(&dir);
            x = cand;
            resid = cand_r;
            current = val;
            if step < params.eta * sigma {
                break;
            }
        }
        let support = x.iter().filter(|v| v.norm() > 3.0 * sigma).count();
        log::trace!("isl0 sigma={sigma:.3e} inner={inner} L={current:.6e} support={support}");
        out.epochs.push(EpochTrace {
            sigma,
            inner_iterations: inner,
            objective: current,
            support,
            stalled,
        });
        out.final_sigma = sigma;
        sigma *= params.rho;
    }
    out.x = x;
    Ok(out)
}

/// Objective of the `sigma_st` fit, `||(W_sigma(x)/sigma^2) x - c||^2` with
/// `c = lambda A^* (y - A x)`.
pub fn sigma_st_objective(x: &[Complex64], c: &[Complex64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    x.iter()
        .zip(c)
        .map(|(x, c)| (x * (f_sigma(x.norm(), sigma) / s2) - c).norm_sqr())
        .sum()
}

/// Fits the starting `sigma` so that `x_hat` is as close as possible to a
/// fixed point of `zeta`. Scans a log grid over `[sigma0, 10 max|x_hat|]`,
/// refines the best cell by golden section on `log sigma`, and never returns
/// a point worse than the initial guess `max|x_hat|`.
pub fn estimate_sigma_st<A: SensingOperator + ?Sized>(
    x_hat: &[Complex64],
    op: &A,
    y: &[Complex64],
    lambda: f64,
    sigma0: f64,
) -> f64 {
    let peak = norm_inf(x_hat);
    if peak <= 0.0 {
        return sigma0.max(1.0);
    }
    let c: Vec<Complex64> = op
        .adjoint(&sub(y, &op.apply(x_hat)))
        .iter()
        .map(|v| v * lambda)
        .collect();
    let obj = |log_s: f64| sigma_st_objective(x_hat, &c, log_s.exp());

    let lo = sigma0.ln();
    let hi = (10.0 * peak).max(sigma0).ln();
    if hi <= lo {
        return sigma0;
    }
    const GRID: usize = 240;
    let step = (hi - lo) / GRID as f64;
    let values: Vec<f64> = (0..=GRID).map(|i| obj(lo + step * i as f64)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let (mut a, mut b) = (
        lo + step * best.saturating_sub(1) as f64,
        lo + step * (best + 1).min(GRID) as f64,
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c1 = b - inv_phi * (b - a);
    let mut c2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (obj(c1), obj(c2));
    for _ in 0..60 {
        if f1 <= f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - inv_phi * (b - a);
            f1 = obj(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + inv_phi * (b - a);
            f2 = obj(c2);
        }
    }
    let mut best_log = lo + step * best as f64;
    let mut best_val = values[best];
    for (p, v) in [(c1, f1), (c2, f2), (peak.ln(), obj(peak.ln()))] {
        if v < best_val && p >= lo && p <= hi {
            best_log = p;
            best_val = v;
        }
    }
    best_log.exp()
}
