//! Thresholds, the block test and per-code extraction.

use num_complex::Complex64;
use roots::{find_root_brent, Convergency};
use serde::{Deserialize, Serialize};

use super::error_model::ErrorModel;
use super::gchi2::Gchi2;
use crate::error::{RangingError, Result};
use crate::operator::SensingOperator;

/// Which disturbance variance the block test uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// The receiver noise variance as given.
    Known,
    /// The given variance, unless the observed residual `||y - A x_bar||^2`
    /// lies more than [`RESIDUAL_Z`] standard deviations above its mean
    /// under it. Then the variance that explains the residual under the
    /// linear model, so signal energy the sparse fit leaves behind
    /// (pulse-shaping tails) widens the thresholds instead of triggering
    /// detections.
    #[default]
    ResidualMatched,
}

/// Standard deviations of residual energy tolerated before the noise
/// variance is re-estimated.
pub const RESIDUAL_Z: f64 = 3.0;

impl NoiseModel {
    /// Variance to use given the nominal one, the observed residual energy
    /// and the residual's mean and variance per unit noise, `tr(K^2)` and
    /// `tr(K^4)`.
    pub fn resolve(self, nominal: f64, residual_energy: f64, gain: f64, gain_sq: f64) -> f64 {
        match self {
            NoiseModel::Known => nominal,
            NoiseModel::ResidualMatched => {
                let bound = nominal * (gain + RESIDUAL_Z * gain_sq.sqrt());
                if gain > 0.0 && residual_energy > bound {
                    residual_energy / gain
                } else {
                    nominal
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Relative magnitude gate for the timing estimate.
    pub timing_gate: f64,
    /// Minimum `|x_t|^2 / Var(v_t)` for an entry to mark the first path;
    /// zero disables the noise floor.
    pub timing_noise_gate: f64,
    /// Compute every block threshold even when the decision is already
    /// settled by the distribution bounds.
    pub exact_thresholds: bool,
    pub noise: NoiseModel,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            timing_gate: 0.1,
            timing_noise_gate: 12.0,
            exact_thresholds: false,
            noise: NoiseModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedCode {
    pub code: usize,
    pub timing: usize,
    pub power: f64,
    #[serde(skip)]
    pub channel: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: Vec<DetectedCode>,
    pub pfa: f64,
    /// Per-block thresholds; `None` where the decision did not need one.
    pub thresholds: Vec<Option<f64>>,
}

impl DetectionResult {
    pub fn codes(&self) -> std::collections::BTreeSet<usize> {
        self.detected.iter().map(|d| d.code).collect()
    }

    pub fn get(&self, code: usize) -> Option<&DetectedCode> {
        self.detected.iter().find(|d| d.code == code)
    }
}

/// Per-block false-alarm probability giving overall rate `pfa` over `g` blocks.
pub fn psi_from_pfa(pfa: f64, g: usize) -> f64 {
    if pfa <= 0.0 {
        return 0.0;
    }
    if pfa >= 1.0 {
        return 1.0;
    }
    -((-pfa).ln_1p() / g as f64).exp_m1()
}

struct SfTolerance {
    y_tol: f64,
}

impl Convergency<f64> for SfTolerance {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() <= self.y_tol
    }

    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= 1e-13 * x1.abs().max(x2.abs())
    }

    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= 200
    }
}

/// Solves `1 - u + ln u = ln psi` for `u > 1`.
fn chernoff_factor(psi: f64) -> f64 {
    let target = psi.ln();
    let mut u = 1.0 - target + (1.0 - target).ln();
    for _ in 0..50 {
        let h = 1.0 - u + u.ln() - target;
        let dh = 1.0 / u - 1.0;
        let next = (u - h / dh).max(1.0 + 1e-12);
        if (next - u).abs() <= 1e-14 * u {
            u = next;
            break;
        }
        u = next;
    }
    u
}

/// Bounds on the threshold from the mean and the largest weight:
/// `P(S > t) >= exp(-t / a_max)` and `P(S > t) <= (t/T) exp(1 - t/T)` for
/// `t >= T = E S`.
pub fn threshold_bounds(psi: f64, mean: f64, max_weight: f64) -> (f64, f64) {
    let lo = max_weight * (1.0 / psi).ln();
    let hi = mean * chernoff_factor(psi);
    (lo.max(0.0), hi.max(lo))
}

/// The threshold with `P(S > tau) = psi` for the given block spectrum.
pub fn threshold_for_fa(psi: f64, lambda: &[f64], sigma_e2: f64) -> Result<f64> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(RangingError::Threshold(format!(
            "psi = {psi} outside (0, 1)"
        )));
    }
    let dist = Gchi2::new(lambda, sigma_e2);
    if dist.is_degenerate() {
        return Ok(0.0);
    }
    let excess = |t: f64| dist.sf(t) - psi;
    let sum: f64 = lambda.iter().map(|v| v.max(0.0)).sum();
    let sum2: f64 = lambda.iter().map(|v| v * v).sum();
    let (lo_bound, _) = threshold_bounds(psi, dist.mean(), dist.max_weight());
    let mut hi = sigma_e2 * (sum + 20.0 * sum2.sqrt());
    let mut lo = lo_bound.min(hi);
    let y_tol = 1e-10_f64.min(1e-6 * psi);
    let mut expansions = 0;
    while excess(hi) > 0.0 {
        if expansions == 10 {
            return Err(RangingError::Threshold(format!(
                "no bracket up to {hi:e} for psi = {psi:e}"
            )));
        }
        lo = hi;
        hi *= 2.0;
        expansions += 1;
    }
    let y_lo = excess(lo);
    if y_lo.abs() <= y_tol {
        return Ok(lo);
    }
    if y_lo < 0.0 {
        // the lower bound is rigorous; this only happens through rounding
        lo = 0.0;
    }
    let mut conv = SfTolerance { y_tol };
    find_root_brent(lo, hi, excess, &mut conv)
        .map_err(|e| RangingError::Threshold(format!("root search failed for psi = {psi:e}: {e}")))
}

/// Index of the first entry with magnitude at least `gate` times the block
/// maximum.
pub fn timing_estimate(block: &[Complex64], gate: f64) -> Option<usize> {
    timing_estimate_with_floor(block, gate, None)
}

/// As [`timing_estimate`], but an entry must also have `|x_t|^2` at least
/// `floor[t]`. Falls back to the relative gate alone if no entry passes both.
pub fn timing_estimate_with_floor(
    block: &[Complex64],
    gate: f64,
    floor: Option<&[f64]>,
) -> Option<usize> {
    let peak = block.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return None;
    }
    let relative = |v: &Complex64| v.norm() >= gate * peak;
    floor
        .and_then(|f| {
            block
                .iter()
                .zip(f)
                .position(|(v, fl)| relative(v) && v.norm_sqr() >= *fl)
        })
        .or_else(|| block.iter().position(relative))
}

fn block_timing<A: SensingOperator + ?Sized>(
    block: &[Complex64],
    error_model: &ErrorModel,
    op: &A,
    i: usize,
    config: &DetectorConfig,
) -> usize {
    let floor = (config.timing_noise_gate > 0.0).then(|| {
        let scale = config.timing_noise_gate * error_model.sigma_e2();
        error_model
            .entry_variances(op, i)
            .into_iter()
            .map(|v| scale * v)
            .collect::<Vec<f64>>()
    });
    timing_estimate_with_floor(block, config.timing_gate, floor.as_deref()).unwrap_or(0)
}

/// Bracket on the block p-value `P(S > E)` under the null.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValue {
    pub lower: f64,
    pub upper: f64,
}

impl PValue {
    fn exact(p: f64) -> Self {
        PValue { lower: p, upper: p }
    }

    fn straddles(&self, lo: f64, hi: f64) -> bool {
        self.lower < hi && self.upper >= lo
    }
}

/// P-value bracket of block `i` tight enough to decide the test at every
/// per-block rate in `[psi_min, psi_max]`. The exact tail probability is
/// only evaluated when the cheap bounds leave the decision open.
pub fn block_p_value<A: SensingOperator + ?Sized>(
    energy: f64,
    error_model: &ErrorModel,
    op: &A,
    i: usize,
    psi_min: f64,
    psi_max: f64,
) -> PValue {
    let s2 = error_model.sigma_e2();
    if energy <= 0.0 {
        return PValue::exact(1.0);
    }
    let mean = s2 * error_model.trace(op, i);
    if mean <= 0.0 {
        return PValue::exact(0.0);
    }
    let ratio = energy / mean;
    let mut bracket = PValue {
        lower: (-energy / (s2 * error_model.max_eigenvalue_lower(op, i))).exp(),
        upper: 1.0,
    };
    if ratio >= 1.0 {
        bracket.upper = ratio * (1.0 - ratio).exp();
    } else {
        // Paley-Zygmund with E S^2 <= 2 (E S)^2
        bracket.lower = bracket.lower.max(0.5 * (1.0 - ratio).powi(2));
    }
    if !bracket.straddles(psi_min, psi_max) {
        return bracket;
    }
    PValue::exact(Gchi2::new(error_model.spectrum(op, i), s2).sf(energy))
}

/// Block energy test at each overall false-alarm rate in `pfas`.
pub fn detect_many<A: SensingOperator + ?Sized>(
    x_bar: &[Complex64],
    error_model: &ErrorModel,
    op: &A,
    pfas: &[f64],
    config: &DetectorConfig,
) -> Result<Vec<DetectionResult>> {
    let g = error_model.blocks();
    let n1 = error_model.block_len();
    if x_bar.len() != g * n1 {
        return Err(RangingError::Dimension {
            what: "x_bar",
            got: x_bar.len(),
            expected: g * n1,
        });
    }
    if pfas.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = pfas.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(RangingError::InvalidConfig(format!(
            "pfa must lie in (0, 1), got {bad}"
        )));
    }
    let psis: Vec<f64> = pfas.iter().map(|&p| psi_from_pfa(p, g)).collect();
    let psi_min = psis.iter().copied().fold(1.0, f64::min);
    let psi_max = psis.iter().copied().fold(0.0, f64::max);
    let mut results: Vec<DetectionResult> = pfas
        .iter()
        .map(|&pfa| DetectionResult {
            detected: Vec::new(),
            pfa,
            thresholds: Vec::with_capacity(g),
        })
        .collect();
    for i in 0..g {
        let block = &x_bar[i * n1..(i + 1) * n1];
        let energy: f64 = block.iter().map(|v| v.norm_sqr()).sum();
        let p_value = if config.exact_thresholds {
            None
        } else {
            Some(block_p_value(energy, error_model, op, i, psi_min, psi_max))
        };
        let mut timing = None;
        for (res, &psi) in results.iter_mut().zip(&psis) {
            let (hit, tau) = match p_value {
                Some(p) => (energy > 0.0 && p.upper < psi, None),
                None => {
                    let tau =
                        threshold_for_fa(psi, error_model.spectrum(op, i), error_model.sigma_e2())?;
                    (energy > tau, Some(tau))
                }
            };
            res.thresholds.push(tau);
            if hit {
                res.detected.push(DetectedCode {
                    code: i,
                    timing: *timing
                        .get_or_insert_with(|| block_timing(block, error_model, op, i, config)),
                    power: energy,
                    channel: block.to_vec(),
                });
            }
        }
    }
    Ok(results)
}

/// Block energy test on `x_bar` at overall false-alarm rate `pfa`.
pub fn detect<A: SensingOperator + ?Sized>(
    x_bar: &[Complex64],
    error_model: &ErrorModel,
    op: &A,
    pfa: f64,
    config: &DetectorConfig,
) -> Result<DetectionResult> {
    Ok(detect_many(x_bar, error_model, op, &[pfa], config)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_closed_form() {
        assert_eq!(psi_from_pfa(0.0, 32), 0.0);
        let psi = psi_from_pfa(1e-4, 32);
        assert!((psi - 3.1251e-6).abs() < 1e-9, "{psi}");
        let back = 1.0 - (1.0 - psi).powi(32);
        assert!((back - 1e-4).abs() <= 1e-12);
    }

    #[test]
    fn exponential_threshold() {
        let tau = threshold_for_fa(0.5, &[1.0], 1.0).unwrap();
        assert!((tau - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn round_trip_and_monotone() {
        let lambda = [3.0, 1.5, 0.7, 0.2, 0.05];
        let mut last = 0.0;
        for psi in [0.3, 1e-2, 1e-4, 1e-6] {
            let tau = threshold_for_fa(psi, &lambda, 0.4).unwrap();
            let chi = super::super::gchi2::gchi2_cdf(tau, &lambda, 0.4);
            assert!((chi - (1.0 - psi)).abs() <= 1e-9, "{psi}: {chi}");
            assert!(tau > last);
            last = tau;
        }
    }

    #[test]
    fn bounds_bracket_threshold() {
        let lambda = [2.0, 1.0, 1.0, 0.5, 0.1, 0.1, 0.01];
        let dist = Gchi2::new(&lambda, 0.7);
        for psi in [0.1, 1e-3, 1e-7] {
            let tau = threshold_for_fa(psi, &lambda, 0.7).unwrap();
            let (lo, hi) = threshold_bounds(psi, dist.mean(), dist.max_weight());
            assert!(lo <= tau * (1.0 + 1e-9) && tau <= hi, "{lo} {tau} {hi}");
        }
    }

    #[test]
    fn residual_matched_noise() {
        assert_eq!(NoiseModel::Known.resolve(0.1, 50.0, 10.0, 10.0), 0.1);
        assert_eq!(
            NoiseModel::ResidualMatched.resolve(0.1, 50.0, 10.0, 10.0),
            5.0
        );
        // within three standard deviations of the nominal mean 1.0
        assert_eq!(
            NoiseModel::ResidualMatched.resolve(0.1, 1.9, 10.0, 10.0),
            0.1
        );
        assert_eq!(
            NoiseModel::ResidualMatched.resolve(0.1, 0.5, 10.0, 10.0),
            0.1
        );
        assert_eq!(NoiseModel::ResidualMatched.resolve(0.1, 0.5, 0.0, 0.0), 0.1);
    }

    #[test]
    fn lazy_decisions_match_exact_thresholds() {
        use crate::detector::{build_error_model, ErrorModelOptions};
        use crate::operator::DenseOperator;
        use nalgebra::DMatrix;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = DenseOperator::new(DMatrix::from_fn(12, 48, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        }));
        let pfas = [1e-1, 1e-2, 1e-4];
        for trial in 0..20 {
            let scale = 0.02 * (trial + 1) as f64;
            let x: Vec<Complex64> = (0..48)
                .map(|_| Complex64::new(rng.random::<f64>() * scale, rng.random::<f64>() * scale))
                .collect();
            let em = build_error_model(&x, &op, 8, 2.0, 0.5, 0.01, &ErrorModelOptions::default())
                .unwrap();
            let lazy = detect_many(&x, &em, &op, &pfas, &DetectorConfig::default()).unwrap();
            let exact = DetectorConfig {
                exact_thresholds: true,
                ..DetectorConfig::default()
            };
            let full = detect_many(&x, &em, &op, &pfas, &exact).unwrap();
            for (a, b) in lazy.iter().zip(&full) {
                assert_eq!(a.codes(), b.codes(), "trial {trial} pfa {}", a.pfa);
                assert!(b.thresholds.iter().all(|t| t.is_some()));
            }
        }
    }

    #[test]
    fn timing_gate() {
        let mut block = vec![Complex64::new(0.0, 0.0); 10];
        block[2] = Complex64::new(0.9, 0.0);
        block[3] = Complex64::new(0.1, 0.0);
        assert_eq!(timing_estimate(&block, 0.1), Some(2));
        block[1] = Complex64::new(0.05, 0.0);
        assert_eq!(timing_estimate(&block, 0.1), Some(2));
        assert_eq!(timing_estimate(&[Complex64::new(0.0, 0.0); 4], 0.1), None);
        block[1] = Complex64::new(0.3, 0.0);
        let mut floor = vec![0.0; 10];
        assert_eq!(
            timing_estimate_with_floor(&block, 0.1, Some(&floor)),
            Some(1)
        );
        floor[1] = 0.2;
        assert_eq!(
            timing_estimate_with_floor(&block, 0.1, Some(&floor)),
            Some(2)
        );
        let floor = vec![1.0; 10];
        assert_eq!(
            timing_estimate_with_floor(&block, 0.1, Some(&floor)),
            Some(1)
        );
    }
}
