//! Two-stage recovery: a rough l1 estimate handed to smoothed-l0.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{RangingError, Result};
use crate::isl0::{default_lambda, estimate_sigma_st, sl0_solve, Sl0Params};
use crate::l1::{primal_dual_solve, L1Params, L1TraceRecord};
use crate::operator::SensingOperator;

/// Smoothed-l0 settings that do not depend on the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sl0Settings {
    /// Fixed data-fit weight; `None` uses `0.1 ||A^* y||_inf`.
    pub lambda: Option<f64>,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub sigma0: f64,
    pub max_inner: usize,
}

impl Default for Sl0Settings {
    fn default() -> Self {
        let p = Sl0Params::default();
        Sl0Settings {
            lambda: None,
            rho: p.rho,
            eta: p.eta,
            gamma: p.gamma,
            sigma0: p.sigma0,
            max_inner: p.max_inner,
        }
    }
}

impl Sl0Settings {
    pub fn resolve(&self, lambda: f64, sigma_st: f64) -> Sl0Params {
        Sl0Params {
            lambda,
            rho: self.rho,
            eta: self.eta,
            gamma: self.gamma,
            sigma0: self.sigma0,
            sigma_st,
            max_inner: self.max_inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoverConfig {
    pub kappa_target: f64,
    pub l1_max_iters: usize,
    pub l1: L1Params,
    pub sl0: Sl0Settings,
    pub flop_accounting: bool,
}

impl Default for HandoverConfig {
    fn default() -> Self {
        HandoverConfig {
            kappa_target: 0.8,
            l1_max_iters: 40,
            l1: L1Params::default(),
            sl0: Sl0Settings::default(),
            flop_accounting: true,
        }
    }
}

impl HandoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_target > 0.0 && self.kappa_target <= 1.0) {
            return Err(RangingError::InvalidConfig(format!(
                "kappa_target {} outside (0, 1]",
                self.kappa_target
            )));
        }
        if self.l1_max_iters == 0 {
            return Err(RangingError::InvalidConfig(
                "l1_max_iters must be positive".into(),
            ));
        }
        if !(self.l1.alpha > 0.0 && self.l1.alpha <= 1.0 && self.l1.mu0 > 0.0) {
            return Err(RangingError::InvalidConfig(format!(
                "invalid l1 parameters {:?}",
                self.l1
            )));
        }
        self.sl0.resolve(1.0, 1.0).validate()
    }
}

/// Problem sizes entering the operation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub codes: usize,
    pub m: usize,
    pub n1: usize,
}

impl Dims {
    pub fn of(config: &crate::config::SystemConfig) -> Self {
        Dims {
            n: config.n,
            codes: config.codes,
            m: config.m(),
            n1: config.n1,
        }
    }
}

/// Work done by one solve, in the units the operation count needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Iterations {
    pub l1: usize,
    pub zeta_calls: usize,
}

/// Flops of one `zeta` evaluation:
/// `2 G N log2 N + G M (M + 1) / 2 + G N_1 + M^2 (M - 1.5) / 3`.
pub fn zeta_flops(d: Dims) -> f64 {
    let (n, g, m, n1) = (d.n as f64, d.codes as f64, d.m as f64, d.n1 as f64);
    2.0 * g * n * n.log2() + g * m * (m + 1.0) / 2.0 + g * n1 + m * m * (m - 1.5) / 3.0
}

/// Flops of one interior-point iteration: two weighted Gram matrices and
/// their products (same FFT structure as `zeta`), plus a Cholesky
/// factorization of the real `2M x 2M` Newton system.
pub fn l1_iteration_flops(d: Dims) -> f64 {
    let (n, g, m) = (d.n as f64, d.codes as f64, d.m as f64);
    let grams = 2.0 * (g * n * n.log2() + g * m * (m + 1.0) / 2.0);
    let products = 4.0 * g * n * n.log2();
    let newton = (2.0 * m).powi(3) / 3.0;
    grams + products + newton
}

/// Total operation count for a solve.
pub fn count_flops(dims: Dims, iterations: Iterations) -> u64 {
    let total = iterations.zeta_calls as f64 * zeta_flops(dims)
        + iterations.l1 as f64 * l1_iteration_flops(dims);
    total.round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverReport {
    pub kappa: f64,
    pub l1_iterations: usize,
    pub l1_reached_target: bool,
    pub l1_line_search_failed: bool,
    pub lambda: f64,
    pub sigma_st: f64,
    /// Smallest smoothing width processed.
    pub final_sigma: f64,
    pub sl0_epochs: usize,
    pub zeta_calls: usize,
    pub descent_violations: usize,
    pub flops: Option<u64>,
    #[serde(skip)]
    pub l1_trace: Vec<L1TraceRecord>,
}

impl HandoverReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverOutput {
    pub x_bar: Vec<Complex64>,
    /// The rough estimate handed to smoothed-l0.
    pub x_hat: Vec<Complex64>,
    pub report: HandoverReport,
}

/// Runs the l1 stage to `kappa_target`, fits `sigma_st` to its output and
/// refines with smoothed-l0.
pub fn handover_solve<A: SensingOperator + ?Sized>(
    op: &A,
    y: &[Complex64],
    config: &HandoverConfig,
    dims: Option<Dims>,
) -> Result<HandoverOutput> {
    config.validate()?;
    let rough = primal_dual_solve(op, y, config.kappa_target, config.l1_max_iters, &config.l1)?;
    if !rough.reached {
        log::warn!(
            "handing over below the kappa target ({:.3} < {})",
            rough.kappa,
            config.kappa_target
        );
    }
    let lambda = config.sl0.lambda.unwrap_or_else(|| default_lambda(op, y));
    let sigma_st = estimate_sigma_st(&rough.x_hat, op, y, lambda, config.sl0.sigma0);
    let params = config.sl0.resolve(lambda, sigma_st);
    let refined = sl0_solve(&rough.x_hat, op, y, &params)?;

    let flops = match (config.flop_accounting, dims) {
        (true, Some(d)) => Some(count_flops(
            d,
            Iterations {
                l1: rough.iterations,
                zeta_calls: refined.zeta_calls,
            },
        )),
        _ => None,
    };
    let report = HandoverReport {
        kappa: rough.kappa,
        l1_iterations: rough.iterations,
        l1_reached_target: rough.reached,
        l1_line_search_failed: rough.line_search_failed,
        lambda,
        sigma_st,
        final_sigma: refined.final_sigma,
        sl0_epochs: refined.epochs.len(),
        zeta_calls: refined.zeta_calls,
        descent_violations: refined.descent_violations,
        flops,
        l1_trace: rough.trace,
    };
    Ok(HandoverOutput {
        x_bar: refined.x,
        x_hat: rough.x_hat,
        report,
    })
}
