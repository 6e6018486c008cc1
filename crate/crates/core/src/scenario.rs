//! Ground truth for one ranging opportunity and the received-signal
//! simulators.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    combined_channel, complex_gaussian, synthesize_channel, ChannelProfile, ChannelRealization,
};
use crate::codes::CodeMatrix;
use crate::config::SystemConfig;
use crate::model::MeasurementModel;

/// A terminal transmitting code `code` (0-based) through `channel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub code: usize,
    pub channel: ChannelRealization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingScenario {
    pub terminals: Vec<Terminal>,
    /// Per-subcarrier receiver noise variance `sigma_e^2`.
    pub noise_var: f64,
}

impl RangingScenario {
    pub fn empty(noise_var: f64) -> Self {
        RangingScenario {
            terminals: Vec::new(),
            noise_var,
        }
    }

    /// `k` terminals, each picking a code uniformly (collisions allowed) and a
    /// channel profile uniformly.
    pub fn random<R: Rng + ?Sized>(
        config: &SystemConfig,
        k: usize,
        noise_var: f64,
        rng: &mut R,
    ) -> Self {
        let terminals = (0..k)
            .map(|_| {
                let code = rng.random_range(0..config.codes);
                let profile = ChannelProfile::ALL[rng.random_range(0..ChannelProfile::ALL.len())];
                Terminal {
                    code,
                    channel: synthesize_channel(profile, config, rng),
                }
            })
            .collect();
        RangingScenario {
            terminals,
            noise_var,
        }
    }

    pub fn user_count(&self) -> usize {
        self.terminals.len()
    }

    /// The set of codes with at least one terminal.
    pub fn active_codes(&self) -> BTreeSet<usize> {
        self.terminals.iter().map(|t| t.code).collect()
    }

    /// Number of terminals on `code`.
    pub fn users_on(&self, code: usize) -> usize {
        self.terminals.iter().filter(|t| t.code == code).count()
    }

    pub fn has_collision(&self) -> bool {
        self.active_codes().len() < self.terminals.len()
    }

    fn channels_on(&self, code: usize) -> Vec<&ChannelRealization> {
        self.terminals
            .iter()
            .filter(|t| t.code == code)
            .map(|t| &t.channel)
            .collect()
    }

    /// Combined channel of `code` truncated to `N_1`, with the truncation flag.
    pub fn combined(&self, code: usize, config: &SystemConfig) -> (Vec<Complex64>, bool) {
        combined_channel(&self.channels_on(code), config.n, config.n1)
    }

    /// Smallest delay among the terminals on `code`.
    pub fn timing(&self, code: usize) -> Option<usize> {
        self.channels_on(code).iter().map(|c| c.delay).min()
    }

    /// The stacked sparse vector `x` (length `G N_1`).
    pub fn stacked_truth(&self, config: &SystemConfig) -> Vec<Complex64> {
        let mut x = Vec::with_capacity(config.unknowns());
        for code in 0..config.codes {
            x.extend(self.combined(code, config).0);
        }
        x
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Frequency-domain simulation `y = sum_l E_l h_l + e` with `e ~ CN(0, sigma_e^2 I)`.
pub fn simulate_received<R: Rng + ?Sized>(
    scenario: &RangingScenario,
    model: &MeasurementModel,
    rng: &mut R,
) -> Vec<Complex64> {
    let n = model.config().n;
    let mut y = vec![Complex64::new(0.0, 0.0); model.config().m()];
    for code in scenario.active_codes() {
        let channels = scenario.channels_on(code);
        // full-length combined response, so nothing is lost to truncation here
        let (h, _) = combined_channel(&channels, n, n);
        for (yi, v) in y.iter_mut().zip(model.apply_code(code, &h)) {
            *yi += v;
        }
    }
    if scenario.noise_var > 0.0 {
        for yi in y.iter_mut() {
            *yi += complex_gaussian(rng, scenario.noise_var);
        }
    }
    y
}

/// Noiseless sample-level simulation of the ranging opportunity.
///
/// Each terminal builds `s = F^* Theta^T c` with a direct inverse DFT, forms
/// the two ranging symbols (cyclic prefix on the first, cyclic postfix on the
/// second), and the base station sees their linear convolution with the
/// delayed impulse response. The first `N` samples of the second symbol go
/// through a unitary DFT and the ranging bins are kept.
pub fn simulate_time_domain(
    scenario: &RangingScenario,
    config: &SystemConfig,
    codes: &CodeMatrix,
) -> Vec<Complex64> {
    let n = config.n;
    let ng = config.cp_len;
    let nbar = n + ng;
    let scale = 1.0 / (n as f64).sqrt();
    let bins: Vec<usize> = config.subcarriers.iter().map(|j| j - 1).collect();

    let mut received = vec![Complex64::new(0.0, 0.0); n];
    for t in &scenario.terminals {
        let s: Vec<Complex64> = (0..n)
            .map(|q| {
                bins.iter()
                    .enumerate()
                    .map(|(m, &k)| {
                        let phase = 2.0 * PI * ((k * q) % n) as f64 / n as f64;
                        Complex64::from_polar(codes.chip(m, t.code) as f64 * scale, phase)
                    })
                    .sum()
            })
            .collect();

        // u over two symbols: [cp | s] then [s | postfix]
        let mut u = Vec::with_capacity(2 * nbar);
        u.extend_from_slice(&s[n - ng..]);
        u.extend_from_slice(&s);
        u.extend_from_slice(&s);
        u.extend_from_slice(&s[..ng]);

        let d = t.channel.delay;
        for (i, r) in received.iter_mut().enumerate() {
            let k = nbar + i;
            for (p, h) in t.channel.taps.iter().enumerate() {
                if let Some(idx) = k.checked_sub(p + d) {
                    if idx < u.len() {
                        *r += h * u[idx];
                    }
                }
            }
        }
    }

    bins.iter()
        .map(|&k| {
            received
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v * Complex64::from_polar(scale, -2.0 * PI * ((k * i) % n) as f64 / n as f64)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SubcarrierLayout;
    use crate::operator::SensingOperator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_config() -> SystemConfig {
        SystemConfig::new(64, 8, 16, 4, 20, 6, SubcarrierLayout::Scattered, 3).unwrap()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
        let den: f64 = b.iter().map(|q| q.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn empty_noiseless_is_zero() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = simulate_received(&RangingScenario::empty(0.0), &model, &mut rng);
        assert!(y.iter().all(|v| v.norm() == 0.0));
        let yt = simulate_time_domain(&RangingScenario::empty(0.0), &cfg, model.codes());
        assert!(yt.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_terminal_equals_e_times_h() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sc = RangingScenario::random(&cfg, 1, 0.0, &mut rng);
        let code = sc.terminals[0].code;
        let (h, truncated) = sc.combined(code, &cfg);
        assert!(!truncated);
        let direct: Vec<Complex64> = (model.block(code) * nalgebra::DVector::from_vec(h))
            .iter()
            .copied()
            .collect();
        let y = simulate_received(&sc, &model, &mut rng);
        assert!(rel_err(&y, &direct) < 1e-12);
    }

    #[test]
    fn frequency_model_matches_time_domain() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 1..=4 {
            let sc = RangingScenario::random(&cfg, k, 0.0, &mut rng);
            let yf = simulate_received(&sc, &model, &mut rng);
            let yt = simulate_time_domain(&sc, &cfg, model.codes());
            assert!(rel_err(&yf, &yt) < 1e-9, "k = {k}");
        }
    }

    #[test]
    fn superposition_is_linear() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = RangingScenario::random(&cfg, 2, 0.0, &mut rng);
        let a = RangingScenario {
            terminals: vec![sc.terminals[0].clone()],
            noise_var: 0.0,
        };
        let b = RangingScenario {
            terminals: vec![sc.terminals[1].clone()],
            noise_var: 0.0,
        };
        let yab = simulate_received(&sc, &model, &mut rng);
        let ya = simulate_received(&a, &model, &mut rng);
        let yb = simulate_received(&b, &model, &mut rng);
        let sum: Vec<Complex64> = ya.iter().zip(&yb).map(|(p, q)| p + q).collect();
        assert!(rel_err(&yab, &sum) < 1e-12);
    }

    #[test]
    fn stacked_truth_reproduces_received() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sc = RangingScenario::random(&cfg, 3, 0.0, &mut rng);
        let x = sc.stacked_truth(&cfg);
        let y = simulate_received(&sc, &model, &mut rng);
        assert!(rel_err(&model.apply(&x), &y) < 1e-12);
    }

    #[test]
    fn delay_shift_moves_support() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sc = RangingScenario::random(&cfg, 1, 0.0, &mut rng);
        sc.terminals[0].channel.delay = 2;
        let code = sc.terminals[0].code;
        let (h2, _) = sc.combined(code, &cfg);
        sc.terminals[0].channel.delay = 5;
        let (h5, _) = sc.combined(code, &cfg);
        for i in 0..cfg.n1 - 3 {
            assert_eq!(h5[i + 3], h2[i]);
        }
        let y5 = simulate_time_domain(&sc, &cfg, model.codes());
        assert!(rel_err(&model.apply_code(code, &h5), &y5) < 1e-9);
    }

    #[test]
    fn noise_has_requested_variance() {
        let cfg = toy_config();
        let model = MeasurementModel::from_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sc = RangingScenario::empty(0.3);
        let mut acc = 0.0;
        let reps = 4000;
        for _ in 0..reps {
            acc += simulate_received(&sc, &model, &mut rng)
                .iter()
                .map(|v| v.norm_sqr())
                .sum::<f64>();
        }
        let var = acc / (reps * cfg.m()) as f64;
        assert!((var - 0.3).abs() < 0.01, "{var}");
    }

    #[test]
    fn scenario_json_round_trip() {
        let cfg = toy_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sc = RangingScenario::random(&cfg, 3, 0.1, &mut rng);
        let back: RangingScenario = serde_json::from_str(&sc.to_json().unwrap()).unwrap();
        assert_eq!(back, sc);
    }
}
