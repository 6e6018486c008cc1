//! Rough sparse estimate from the dual of basis pursuit.
//!
//! The dual `max Re(y^* g)` subject to `|a_i^* g| <= 1` is solved by a
//! primal-dual interior point iteration on the relaxed KKT system
//!
//! ```text
//! y = A diag(z) A^* g,    z_i (1 - |a_i^* g|^2) = mu
//! ```
//!
//! and the primal estimate is read off as `x = diag(z) A^* g`. The iteration
//! stops as soon as the energy of `x` concentrates on `M/2` entries.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RangingError, Result};
use crate::linalg::{hpd_solve, norm, norm1};
use crate::operator::SensingOperator;

/// Centrality is not reduced below this value.
const MU_FLOOR: f64 = 1e-14;

/// Interior point state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub g: Vec<Complex64>,
    pub z: Vec<f64>,
    pub mu: f64,
    pub alpha: f64,
}

impl DualState {
    /// `g = 0`, `z = 1`: strictly interior since every constraint value is -1.
    pub fn initial(rows: usize, cols: usize, mu: f64, alpha: f64) -> Self {
        DualState {
            g: vec![Complex64::new(0.0, 0.0); rows],
            z: vec![1.0; cols],
            mu,
            alpha,
        }
    }

    /// Primal estimate `diag(z) A^* g`.
    pub fn primal<A: SensingOperator + ?Sized>(&self, op: &A) -> Vec<Complex64> {
        op.adjoint(&self.g)
            .iter()
            .zip(&self.z)
            .map(|(q, z)| q * *z)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L1Params {
    pub mu0: f64,
    pub alpha: f64,
    /// Step halvings allowed in the line search.
    pub max_halvings: usize,
    /// `mu` is kept at least this fraction of the mean complementarity
    /// `mean(-z_i f_i)`, so a lagging iterate is not pushed off the central
    /// path. Zero gives the plain geometric schedule.
    pub centering_floor: f64,
}

impl Default for L1Params {
    fn default() -> Self {
        L1Params {
            mu0: 1.0,
            alpha: 0.5,
            max_halvings: 30,
            centering_floor: 0.1,
        }
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1TraceRecord {
    pub iteration: usize,
    pub kappa: f64,
    /// `||tau_mu||` before the step, at the centrality used for the step.
    pub residual_before: f64,
    /// `||tau_mu||` after the step, same centrality.
    pub residual_after: f64,
    pub step: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughEstimate {
    pub x_hat: Vec<Complex64>,
    pub kappa: f64,
    pub iterations: usize,
    /// Set when the stopping rule was met.
    pub reached: bool,
    /// Set when the line search found no acceptable step.
    pub line_search_failed: bool,
    pub state: DualState,
    pub trace: Vec<L1TraceRecord>,
}

/// Constraint values `f_i = |q_i|^2 - 1` for `q = A^* g`.
fn constraint_values(q: &[Complex64]) -> Vec<f64> {
    q.iter().map(|v| v.norm_sqr() - 1.0).collect()
}

/// `tau_mu = [r_dual; r_cent]` with `r_dual = y - A diag(z) A^* g` (split
/// into real and imaginary parts) and `r_cent_i = -z_i f_i(g) - mu`.
pub fn residual<A: SensingOperator + ?Sized>(
    state: &DualState,
    op: &A,
    y: &[Complex64],
) -> Vec<f64> {
    let q = op.adjoint(&state.g);
    residual_from(state, op, y, &q)
}

fn residual_from<A: SensingOperator + ?Sized>(
    state: &DualState,
    op: &A,
    y: &[Complex64],
    q: &[Complex64],
) -> Vec<f64> {
    let zq: Vec<Complex64> = q.iter().zip(&state.z).map(|(q, z)| q * *z).collect();
    let azq = op.apply(&zq);
    let mut out = Vec::with_capacity(2 * y.len() + q.len());
    for (yi, ai) in y.iter().zip(&azq) {
        let r = yi - ai;
        out.push(r.re);
        out.push(r.im);
    }
    out.extend(
        q.iter()
            .zip(&state.z)
            .map(|(q, z)| -z * (q.norm_sqr() - 1.0) - state.mu),
    );
    out
}

fn real_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton direction for the relaxed KKT system at an interior point.
///
/// With `q = A^* g`, `f = |q|^2 - 1`, `s = z / f` and `p = A^* dg`, the
/// linearized stationarity condition is
///
/// ```text
/// A diag(-s) A^* dg + A diag(-s q^2) A^T conj(dg) = y + mu A (q / f)
/// ```
///
/// which is solved as a real symmetric positive-definite system of size
/// `2M`. The multiplier step follows from the linearized slackness
/// condition, `dz = (r_cent - 2 z Re(conj(q) p)) / f`.
pub fn search_directions<A: SensingOperator + ?Sized>(
    state: &DualState,
    op: &A,
    y: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let q = op.adjoint(&state.g);
    let f = constraint_values(&q);
    if f.iter().any(|v| *v >= 0.0) || state.z.iter().any(|v| *v <= 0.0) {
        return Err(RangingError::numerical(
            "l1",
            0,
            "search direction requested at a non-interior point",
        ));
    }
    let neg_s: Vec<f64> = state.z.iter().zip(&f).map(|(z, f)| -z / f).collect();
    let h = op.weighted_gram(&neg_s);
    let d2: Vec<Complex64> = q.iter().zip(&neg_s).map(|(q, s)| q * q * *s).collect();
    let b = op.weighted_gram_transpose(&d2);

    let qb: Vec<Complex64> = q.iter().zip(&f).map(|(q, f)| q / *f).collect();
    let aqb = op.apply(&qb);
    let rhs: Vec<Complex64> = y.iter().zip(&aqb).map(|(y, a)| y + a * state.mu).collect();

    let m = y.len();
    let big = DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let (bi, bj) = (i % m, j % m);
        let (hv, bv) = (h[(bi, bj)], b[(bi, bj)]);
        match (i < m, j < m) {
            (true, true) => hv.re + bv.re,
            (true, false) => bv.im - hv.im,
            (false, true) => hv.im + bv.im,
            (false, false) => hv.re - bv.re,
        }
    });
    let big_rhs = DVector::from_fn(2 * m, |i, _| if i < m { rhs[i].re } else { rhs[i - m].im });
    let sol = hpd_solve(&big, &big_rhs)
        .ok_or_else(|| RangingError::numerical("l1", 0, "Newton system is singular"))?;
    let dg: Vec<Complex64> = (0..m).map(|i| Complex64::new(sol[i], sol[i + m])).collect();

    let p = op.adjoint(&dg);
    let dz = q
        .iter()
        .zip(&p)
        .zip(state.z.iter().zip(&f))
        .map(|((q, p), (z, f))| {
            let r_cent = -z * f - state.mu;
            (r_cent - 2.0 * z * (q.conj() * p).re) / f
        })
        .collect();
    Ok((dg, dz))
}

/// Energy fraction held by the `floor(M/2)` largest-magnitude entries.
pub fn sparsity_ratio(x_hat: &[Complex64], m: usize) -> f64 {
    let mut e: Vec<f64> = x_hat.iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = e.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let keep = (m / 2).min(e.len());
    if keep == 0 {
        return 0.0;
    }
    if keep < e.len() {
        e.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
    }
    e[..keep].iter().sum::<f64>() / total
}

/// Stopping rule of the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Stop {
    Kappa(f64),
    /// Relative duality gap and stationarity residual below the tolerance.
    Converged(f64),
}

/// Iterates until `kappa >= kappa_target` or `max_iters` steps.
pub fn primal_dual_solve<A: SensingOperator + ?Sized>(
    op: &A,
    y: &[Complex64],
    kappa_target: f64,
    max_iters: usize,
    params: &L1Params,
) -> Result<RoughEstimate> {
    if !(kappa_target > 0.0 && kappa_target <= 1.0) {
        return Err(RangingError::InvalidConfig(format!(
            "kappa target {kappa_target} outside (0, 1]"
        )));
    }
    run(op, y, Stop::Kappa(kappa_target), max_iters, params)
}

/// Runs the iteration to basis-pursuit optimality within `tol`.
pub fn primal_dual_solve_tight<A: SensingOperator + ?Sized>(
    op: &A,
    y: &[Complex64],
    tol: f64,
    max_iters: usize,
    params: &L1Params,
) -> Result<RoughEstimate> {
    run(op, y, Stop::Converged(tol), max_iters, params)
}

fn run<A: SensingOperator + ?Sized>(
    op: &A,
    y: &[Complex64],
    stop: Stop,
    max_iters: usize,
    params: &L1Params,
) -> Result<RoughEstimate> {
    if y.len() != op.rows() {
        return Err(RangingError::Dimension {
            what: "y",
            got: y.len(),
            expected: op.rows(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RangingError::numerical(
            "l1",
            0,
            "measurement vector is not finite",
        ));
    }
    let m = op.rows();
    let mut state = DualState::initial(m, op.cols(), params.mu0, params.alpha);
    let mut out = RoughEstimate {
        x_hat: vec![Complex64::new(0.0, 0.0); op.cols()],
        kappa: 0.0,
        iterations: 0,
        reached: false,
        line_search_failed: false,
        state: state.clone(),
        trace: Vec::new(),
    };
    let y_norm = norm(y);
    if y_norm == 0.0 {
        out.reached = true;
        return Ok(out);
    }

    for it in 1..=max_iters {
        let q = op.adjoint(&state.g);
        if q.iter().any(|v| v.norm_sqr() >= 1.0) || state.z.iter().any(|v| *v <= 0.0) {
            // rounding pushed the accepted point onto the boundary
            log::warn!("l1 iterate left the interior at iteration {it}");
            out.line_search_failed = true;
            break;
        }
        let (dg, dz) = search_directions(&state, op, y).map_err(|e| match e {
            RangingError::Numerical { stage, reason, .. } => RangingError::Numerical {
                stage,
                iteration: it,
                reason,
            },
            other => other,
        })?;
        let tau0 = real_norm(&residual_from(&state, op, y, &q));
        let p = op.adjoint(&dg);

        let s_max = state
            .z
            .iter()
            .zip(&dz)
            .filter(|(_, d)| **d < 0.0)
            .map(|(z, d)| -z / d)
            .fold(f64::INFINITY, f64::min);
        let mut s = (0.99 * s_max).min(1.0);
        let mut accepted = None;
        for _ in 0..=params.max_halvings {
            let q_new: Vec<Complex64> = q.iter().zip(&p).map(|(q, p)| q + p * s).collect();
            let z_new: Vec<f64> = state.z.iter().zip(&dz).map(|(z, d)| z + s * d).collect();
            let feasible =
                q_new.iter().all(|v| v.norm_sqr() < 1.0) && z_new.iter().all(|v| *v > 0.0);
            if feasible {
                let trial = DualState {
                    g: state.g.iter().zip(&dg).map(|(g, d)| g + d * s).collect(),
                    z: z_new,
                    mu: state.mu,
                    alpha: state.alpha,
                };
                let tau1 = real_norm(&residual_from(&trial, op, y, &q_new));
                if tau1 <= (1.0 - params.alpha * s) * tau0 {
                    accepted = Some((trial, q_new, tau1));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((mut next, q_new, tau1)) = accepted else {
            log::warn!("l1 line search failed at iteration {it}");
            out.line_search_failed = true;
            break;
        };

        let x_hat: Vec<Complex64> = q_new.iter().zip(&next.z).map(|(q, z)| q * *z).collect();
        let kappa = sparsity_ratio(&x_hat, m);
        out.trace.push(L1TraceRecord {
            iteration: it,
            kappa,
            residual_before: tau0,
            residual_after: tau1,
            step: s,
            mu: next.mu,
        });
        log::trace!(
            "l1 it={it} kappa={kappa:.4} tau={tau1:.3e} mu={:.3e} s={s:.3}",
            next.mu
        );

        let done = match stop {
            Stop::Kappa(target) => kappa >= target,
            Stop::Converged(tol) => {
                let l1 = norm1(&x_hat);
                let dual: f64 = y.iter().zip(&next.g).map(|(y, g)| (y.conj() * g).re).sum();
                let zq: Vec<Complex64> = x_hat.clone();
                let r = norm(&crate::linalg::sub(y, &op.apply(&zq)));
                l1 > 0.0 && (l1 - dual).abs() <= tol * l1 && r <= tol * y_norm
            }
        };
        let complementarity = q_new
            .iter()
            .zip(&next.z)
            .map(|(q, z)| z * (1.0 - q.norm_sqr()))
            .sum::<f64>()
            / next.z.len() as f64;
        next.mu = (next.mu * next.alpha)
            .max(params.centering_floor * complementarity)
            .max(MU_FLOOR);
        state = next;
        out.x_hat = x_hat;
        out.kappa = kappa;
        out.iterations = it;
        if done {
            out.reached = true;
            break;
        }
    }
    if !out.reached {
        log::warn!(
            "l1 stage stopped after {} iterations with kappa {:.3}",
            out.iterations,
            out.kappa
        );
    }
    out.state = state;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DenseOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(m: usize, n: usize, seed: u64) -> DenseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseOperator::new(DMatrix::from_fn(m, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        }))
    }

    #[test]
    fn kappa_examples() {
        let mut x = vec![Complex64::new(0.0, 0.0); 40];
        x[3] = Complex64::new(1.0, 0.0);
        x[7] = Complex64::new(0.0, 2.0);
        assert_eq!(sparsity_ratio(&x, 8), 1.0);
        let ones = vec![Complex64::new(1.0, 0.0); 16];
        assert!((sparsity_ratio(&ones, 8) - 0.25).abs() < 1e-15);
        assert_eq!(sparsity_ratio(&[Complex64::new(0.0, 0.0); 5], 8), 0.0);
    }

    #[test]
    fn zero_measurement_returns_immediately() {
        let op = random_op(6, 12, 1);
        let r = primal_dual_solve(
            &op,
            &[Complex64::new(0.0, 0.0); 6],
            0.8,
            20,
            &L1Params::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.kappa, 0.0);
        assert!(r.x_hat.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn initial_state_is_interior() {
        let op = random_op(6, 12, 2);
        let st = DualState::initial(6, 12, 1.0, 0.5);
        let q = op.adjoint(&st.g);
        assert!(constraint_values(&q).iter().all(|f| *f == -1.0));
        assert!(st.z.iter().all(|z| *z > 0.0));
    }

    #[test]
    fn directions_vanish_at_relaxed_kkt_point() {
        // choose g, z first and define y and mu so the relaxed system holds
        let op = random_op(5, 10, 3);
        let g: Vec<Complex64> = (0..5)
            .map(|i| Complex64::new(0.05 * i as f64, -0.03))
            .collect();
        let q = op.adjoint(&g);
        let mu = 0.2;
        let z: Vec<f64> = q.iter().map(|q| mu / (1.0 - q.norm_sqr())).collect();
        let zq: Vec<Complex64> = q.iter().zip(&z).map(|(q, z)| q * *z).collect();
        let y = op.apply(&zq);
        let st = DualState {
            g,
            z,
            mu,
            alpha: 0.5,
        };
        assert!(real_norm(&residual(&st, &op, &y)) < 1e-12);
        let (dg, dz) = search_directions(&st, &op, &y).unwrap();
        assert!(norm(&dg) < 1e-10);
        assert!(dz.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn iterates_stay_interior_and_residual_decreases() {
        let op = random_op(10, 30, 4);
        let mut x = vec![Complex64::new(0.0, 0.0); 30];
        x[2] = Complex64::new(1.0, 0.5);
        x[17] = Complex64::new(-0.7, 0.2);
        let y = op.apply(&x);
        let r = primal_dual_solve_tight(&op, &y, 1e-8, 200, &L1Params::default()).unwrap();
        assert!(r.reached);
        for t in &r.trace {
            assert!(t.residual_after <= (1.0 - 0.5 * t.step) * t.residual_before);
        }
        let q = op.adjoint(&r.state.g);
        assert!(q.iter().all(|v| v.norm() < 1.0));
        assert!(r.state.z.iter().all(|z| *z > 0.0));
        assert!(crate::linalg::rel_dist(&r.x_hat, &x) < 1e-4);
    }
}
