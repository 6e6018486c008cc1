//! Distribution of `S = sum_k a_k |xi_k|^2` with `xi_k` i.i.d. `CN(0, 1)`,
//! i.e. a weighted sum of unit-mean exponentials.
//!
//! The CDF is obtained by inverting the characteristic function:
//!
//! ```text
//! P(S <= x) = 1/2 - (1/pi) int_0^inf sin(theta(t)) / (t rho(t)) dt
//! theta(t)  = sum_k atan(a_k t) - x t
//! rho(t)    = prod_k sqrt(1 + a_k^2 t^2)
//! ```
//!
//! The integral is done panel by panel with Gauss-Kronrod rules and cut off
//! once a rigorous bound on the remaining tail is below tolerance.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

/// Weights below this fraction of the largest are dropped.
const PRUNE: f64 = 1e-15;
/// Target absolute error of the integral.
const TOL: f64 = 1e-13;
/// Panel budget before giving up on quadrature.
const MAX_PANELS: usize = 400_000;
/// Samples used when quadrature does not converge.
pub const FALLBACK_SAMPLES: usize = 100_000;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// A weighted sum of exponentials, stored with weights normalized by the
/// largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gchi2 {
    /// `a_k / a_max`, descending, tiny ones dropped.
    weights: Vec<f64>,
    /// `a_max`.
    scale: f64,
}

impl Gchi2 {
    /// `a_k = lambda_k sigma_e2`. Negative inputs (rounding in an
    /// eigensolver) are treated as zero.
    pub fn new(lambda: &[f64], sigma_e2: f64) -> Self {
        let scale = lambda.iter().copied().fold(0.0, f64::max) * sigma_e2;
        let mut weights: Vec<f64> = if scale > 0.0 {
            lambda
                .iter()
                .map(|l| l * sigma_e2 / scale)
                .filter(|w| *w > PRUNE)
                .collect()
        } else {
            Vec::new()
        };
        weights.sort_by(|a, b| b.total_cmp(a));
        Gchi2 { weights, scale }
    }

    pub fn is_degenerate(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.scale * self.weights.iter().sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Largest weight `a_max`.
    pub fn max_weight(&self) -> f64 {
        self.scale
    }

    /// `P(S <= tau)`.
    pub fn cdf(&self, tau: f64) -> f64 {
        1.0 - self.sf(tau)
    }

    /// `P(S > tau)`.
    pub fn sf(&self, tau: f64) -> f64 {
        if self.is_degenerate() {
            return if tau < 0.0 { 1.0 } else { 0.0 };
        }
        if tau <= 0.0 {
            return 1.0;
        }
        if self.weights.len() == 1 {
            return (-tau / self.scale).exp();
        }
        match imhof_integral(&self.weights, tau / self.scale) {
            Some(integral) => (0.5 + integral / std::f64::consts::PI).clamp(0.0, 1.0),
            None => {
                log::warn!("gchi2 quadrature did not converge; using Monte Carlo");
                let mut rng = ChaCha8Rng::seed_from_u64(0x6368_6932);
                1.0 - self.cdf_monte_carlo(tau, FALLBACK_SAMPLES, &mut rng)
            }
        }
    }

    /// Empirical CDF from `samples` draws.
    pub fn cdf_monte_carlo<R: Rng + ?Sized>(&self, tau: f64, samples: usize, rng: &mut R) -> f64 {
        let hits = (0..samples).filter(|_| self.sample(rng) <= tau).count();
        hits as f64 / samples as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.scale
            * self
                .weights
                .iter()
                .map(|w| {
                    let e: f64 = rng.sample(Exp1);
                    w * e
                })
                .sum::<f64>()
    }
}

/// `chi(tau, Lambda, sigma_e2)`.
pub fn gchi2_cdf(tau: f64, lambda: &[f64], sigma_e2: f64) -> f64 {
    Gchi2::new(lambda, sigma_e2).cdf(tau)
}

struct Integrand<'a> {
    a: &'a [f64],
    x: f64,
    sum_a: f64,
}

impl Integrand<'_> {
    fn eval(&self, t: f64) -> f64 {
        if t < 1e-9 {
            return self.sum_a - self.x;
        }
        let mut theta = -self.x * t;
        let mut log_rho = 0.0;
        for &a in self.a {
            let u = a * t;
            theta += u.atan();
            log_rho += u.mul_add(u, 1.0).ln();
        }
        theta.sin() / (t * (0.5 * log_rho).exp())
    }

    /// `(log rho(t), m(t))` with `m(t) = d log rho / d log t`.
    fn growth(&self, t: f64) -> (f64, f64) {
        let mut log_rho = 0.0;
        let mut m = 0.0;
        for &a in self.a {
            let u2 = (a * t) * (a * t);
            log_rho += u2.ln_1p();
            m += u2 / (1.0 + u2);
        }
        (0.5 * log_rho, m)
    }

    /// Bound on `|int_t^inf integrand|`: either monotone decay of the
    /// amplitude, or for `theta' < 0` the second mean value theorem.
    fn tail_bound(&self, t: f64) -> f64 {
        let (log_rho, m) = self.growth(t);
        let rho = log_rho.exp();
        let decay = if m > 0.0 {
            1.0 / (m * rho)
        } else {
            f64::INFINITY
        };
        let slope: f64 = self.x
            - self
                .a
                .iter()
                .map(|a| a / (1.0 + (a * t) * (a * t)))
                .sum::<f64>();
        let oscillation = if slope > 0.0 {
            2.0 / (t * rho * slope)
        } else {
            f64::INFINITY
        };
        decay.min(oscillation)
    }
}

fn gauss_kronrod(f: &Integrand<'_>, lo: f64, hi: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f.eval(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f.eval(c - dx) + f.eval(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive(f: &Integrand<'_>, lo: f64, hi: f64, tol: f64, depth: usize) -> Option<f64> {
    let (val, err) = gauss_kronrod(f, lo, hi);
    if err <= tol || err <= 1e-15 * val.abs() {
        return Some(val);
    }
    if depth == 0 {
        return None;
    }
    let mid = 0.5 * (lo + hi);
    Some(adaptive(f, lo, mid, 0.5 * tol, depth - 1)? + adaptive(f, mid, hi, 0.5 * tol, depth - 1)?)
}

/// `F(t) = exp(-i x t) / (t prod_k (1 - i a_k t))`, whose imaginary part on
/// the real axis is the integrand. Evaluated in log form for complex `t`.
fn log_f(a: &[f64], x: f64, t: Complex64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let mut acc = -i * x * t - t.ln();
    for &ak in a {
        acc -= (Complex64::new(1.0, 0.0) - i * ak * t).ln();
    }
    acc
}

/// Largest `log |F(T - i r)|` over a grid that includes every `r = 1 / a_k`,
/// where the factors come closest to their poles.
fn vertical_peak(a: &[f64], x: f64, t0: f64) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut probe = |r: f64| {
        let v = log_f(a, x, Complex64::new(t0, -r)).re;
        peak = peak.max(v);
    };
    probe(0.0);
    for &ak in a {
        probe(1.0 / ak);
    }
    let mut r = 1e-2 * t0.min(1.0 / x);
    while r < 50.0 / x {
        probe(r);
        r *= 2.0;
    }
    peak
}

/// `int_T^inf Im F(t) dt`, moved onto the ray `T - i r` where the integrand
/// decays like `exp(-x r)`. No singularity lies between the two paths since
/// the poles of `F` sit on the imaginary axis.
fn vertical_tail(a: &[f64], x: f64, t0: f64) -> Option<f64> {
    // |F(T - i r)| <= exp(bound - x r)
    let bound = -t0.ln() - a.iter().map(|ak| (ak * t0).min(1.0).ln()).sum::<f64>();
    let g = |r: f64| -log_f(a, x, Complex64::new(t0, -r)).exp().re;
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut width = 0.5 * t0.min(1.0 / x);
    for _ in 0..10_000 {
        let hi = lo + width;
        total += adaptive_fn(&g, lo, hi, 1e-15, 14)?;
        lo = hi;
        width *= 1.25;
        if bound - x * lo - x.ln() < TOL.ln() {
            return Some(total);
        }
    }
    None
}

/// `int_0^inf sin(theta(t)) / (t rho(t)) dt` for normalized weights (the
/// largest is 1). `None` if the panel budget runs out.
fn imhof_integral(a: &[f64], x: f64) -> Option<f64> {
    let f = Integrand {
        a,
        x,
        sum_a: a.iter().sum(),
    };
    // half a period of the fastest possible phase change, never wider than
    // the amplitude scale 1 / max(a) = 1
    let omega = x.max(f.sum_a - x).max(1.0);
    let width = (std::f64::consts::FRAC_PI_2 / omega).min(0.5);
    let mut total = 0.0;
    let mut lo = 0.0;
    for panel in 0..MAX_PANELS {
        // widen panels once the amplitude has decayed well below tolerance
        let hi = lo
            + width
                * if panel > 64 {
                    1.0 + (panel as f64 / 64.0).log2()
                } else {
                    1.0
                };
        total += adaptive(&f, lo, hi, 1e-15, 12)?;
        lo = hi;
        if f.tail_bound(lo) < TOL {
            return Some(total);
        }
        if panel >= 64 && panel % 16 == 15 && vertical_peak(a, x, lo) < -2.0 {
            if let Some(tail) = vertical_tail(a, x, lo) {
                return Some(total + tail);
            }
        }
    }
    None
}

fn adaptive_fn(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, depth: usize) -> Option<f64> {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    let (val, err) = (k * h, ((k - g) * h).abs());
    if !val.is_finite() {
        return None;
    }
    if err <= tol || err <= 1e-15 * val.abs() {
        return Some(val);
    }
    if depth == 0 {
        return None;
    }
    Some(
        adaptive_fn(f, lo, c, 0.5 * tol, depth - 1)? + adaptive_fn(f, c, hi, 0.5 * tol, depth - 1)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_gives_zero() {
        assert_eq!(gchi2_cdf(0.0, &[1.0, 0.5], 1.0), 0.0);
    }

    #[test]
    fn single_weight_is_exponential() {
        for tau in [0.1, 1.0, 3.0, 12.0] {
            let expect = 1.0 - (-tau / 0.7f64).exp();
            assert!((gchi2_cdf(tau, &[0.35], 2.0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_weight_through_quadrature() {
        // a second, negligible weight forces the integral path
        let g = Gchi2::new(&[1.0, 1e-9], 1.0);
        for tau in [0.2f64, 1.0, 2.5, 8.0] {
            let expect = (-tau).exp();
            assert!(
                (g.sf(tau) - expect).abs() < 1e-9,
                "tau {tau}: {} vs {expect}",
                g.sf(tau)
            );
        }
    }

    #[test]
    fn two_equal_weights_are_gamma() {
        // Gamma(2, 1): P(S > x) = (1 + x) e^{-x}
        let g = Gchi2::new(&[1.0, 1.0], 1.0);
        for x in [0.5f64, 2.0, 6.0, 15.0] {
            let expect = (1.0 + x) * (-x).exp();
            assert!((g.sf(x) - expect).abs() < 1e-11, "x {x}");
        }
    }

    #[test]
    fn distinct_weights_match_partial_fractions() {
        let a = [1.0, 0.6, 0.25];
        let g = Gchi2::new(&a, 1.0);
        for x in [0.3, 1.5, 4.0, 10.0] {
            let mut expect = 0.0;
            for (k, ak) in a.iter().enumerate() {
                let mut c = 1.0;
                for (j, aj) in a.iter().enumerate() {
                    if j != k {
                        c *= ak / (ak - aj);
                    }
                }
                expect += c * (-x / ak).exp();
            }
            assert!((g.sf(x) - expect).abs() < 1e-11, "x {x}");
        }
    }

    #[test]
    fn mean_and_variance() {
        let g = Gchi2::new(&[2.0, 1.0], 0.5);
        assert!((g.mean() - 1.5).abs() < 1e-15);
        assert!((g.variance() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn cdf_is_monotone() {
        let lambda: Vec<f64> = (1..=40).map(|k| 1.0 / k as f64).collect();
        let g = Gchi2::new(&lambda, 0.3);
        let mut prev = 0.0;
        for i in 1..60 {
            let c = g.cdf(i as f64 * 0.1);
            assert!(c >= prev - 1e-13);
            prev = c;
        }
        assert!(prev > 0.99);
    }
}
