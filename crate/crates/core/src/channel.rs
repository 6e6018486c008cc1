//! Multipath channel synthesis and the per-code combined channel.
//!
//! Each terminal draws a Rayleigh tapped-delay-line realization from one of
//! the ITU pedestrian/vehicular power-delay profiles, shaped by a
//! root-raised-cosine pulse and sampled on the `T_s` grid.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::RangingError;

/// Sampling interval of the 1024-point system in nanoseconds.
pub const SAMPLE_INTERVAL_NS: f64 = 89.28;
/// Roll-off of the modulation pulse.
pub const RRC_ROLLOFF: f64 = 0.22;
/// Pulse support, in samples, on each side of its peak (10 `T_s` total).
pub const RRC_HALF_SPAN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelProfile {
    PedA,
    PedB,
    VehA,
}

impl ChannelProfile {
    pub const ALL: [ChannelProfile; 3] = [
        ChannelProfile::PedA,
        ChannelProfile::PedB,
        ChannelProfile::VehA,
    ];

    /// Path delays (ns) and relative powers (dB).
    pub fn paths(self) -> &'static [(f64, f64)] {
        match self {
            ChannelProfile::PedA => &[(0.0, 0.0), (110.0, -9.7), (190.0, -19.2), (410.0, -22.8)],
            ChannelProfile::PedB => &[
                (0.0, 0.0),
                (200.0, -0.9),
                (800.0, -4.9),
                (1200.0, -8.0),
                (2300.0, -7.8),
                (3700.0, -23.9),
            ],
            ChannelProfile::VehA => &[
                (0.0, 0.0),
                (310.0, -1.0),
                (710.0, -9.0),
                (1090.0, -10.0),
                (1730.0, -15.0),
                (2510.0, -20.0),
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelProfile::PedA => "ped-a",
            ChannelProfile::PedB => "ped-b",
            ChannelProfile::VehA => "veh-a",
        }
    }
}

impl FromStr for ChannelProfile {
    type Err = RangingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "peda" => Ok(ChannelProfile::PedA),
            "pedb" => Ok(ChannelProfile::PedB),
            "veha" => Ok(ChannelProfile::VehA),
            _ => Err(RangingError::UnknownProfile(s.to_string())),
        }
    }
}

/// Root-raised-cosine pulse at `t` symbol periods, peak `1 - b + 4b/pi`.
pub fn rrc(t: f64, rolloff: f64) -> f64 {
    let b = rolloff;
    if t.abs() < 1e-12 {
        return 1.0 - b + 4.0 * b / PI;
    }
    if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
        let a = PI / (4.0 * b);
        return b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
    let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
    num / den
}

/// Sampled pulse response of one path at fractional delay `delay` (samples):
/// `rrc(p - delay)` for `p = 0..taps`, zero outside the pulse span.
fn path_response(delay: f64, taps: usize) -> Vec<f64> {
    (0..taps)
        .map(|p| {
            let t = p as f64 - delay;
            if t.abs() <= RRC_HALF_SPAN {
                rrc(t, RRC_ROLLOFF)
            } else {
                0.0
            }
        })
        .collect()
}

/// One terminal's channel: `max_taps` complex taps and an integer delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub delay: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ChannelProfile>,
}

impl ChannelRealization {
    /// Length-`n` zero-padded impulse response.
    pub fn padded(&self, n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (o, t) in out.iter_mut().zip(&self.taps) {
            *o = *t;
        }
        out
    }
}

/// Complex circular Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws a channel for `profile`: Rayleigh path gains shaped by the pulse,
/// truncated to `P_max` taps and scaled to unit expected energy, with a
/// delay uniform on `[0, D)`.
pub fn synthesize_channel<R: Rng + ?Sized>(
    profile: ChannelProfile,
    config: &SystemConfig,
    rng: &mut R,
) -> ChannelRealization {
    let taps = config.max_taps;
    let shapes: Vec<(f64, Vec<f64>)> = profile
        .paths()
        .iter()
        .map(|&(ns, db)| {
            (
                10f64.powf(db / 10.0),
                path_response(ns / SAMPLE_INTERVAL_NS, taps),
            )
        })
        .collect();
    let expected: f64 = shapes
        .iter()
        .map(|(p, s)| p * s.iter().map(|v| v * v).sum::<f64>())
        .sum();

    let mut h = vec![Complex64::new(0.0, 0.0); taps];
    for (power, shape) in &shapes {
        let gain = complex_gaussian(rng, power / expected);
        for (hp, s) in h.iter_mut().zip(shape) {
            *hp += gain * s;
        }
    }
    let delay = rng.random_range(0..config.max_delay);
    ChannelRealization {
        taps: h,
        delay,
        profile: Some(profile),
    }
}

/// Circular shift down by `k`: output index `i` holds `v[(i - k) mod n]`.
pub fn circular_shift<T: Copy>(v: &[T], k: usize) -> Vec<T> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k % n;
    (0..n).map(|i| v[(i + n - k) % n]).collect()
}

/// Sum of the delayed impulse responses of every terminal sharing a code,
/// truncated to `n1`. The flag is set when some energy falls outside the
/// first `n1` samples.
pub fn combined_channel(
    terminals: &[&ChannelRealization],
    n: usize,
    n1: usize,
) -> (Vec<Complex64>, bool) {
    let mut h = vec![Complex64::new(0.0, 0.0); n1];
    let mut truncated = false;
    for t in terminals {
        for (p, tap) in t.taps.iter().enumerate() {
            let idx = (t.delay + p) % n;
            if idx < n1 {
                h[idx] += tap;
            } else if tap.norm_sqr() > 0.0 {
                truncated = true;
            }
        }
    }
    (h, truncated)
}

/// Received power of a combined channel, `h^* h`.
pub fn ranging_power(h: &[Complex64]) -> f64 {
    h.iter().map(|v| v.norm_sqr()).sum()
}

/// Probability that a given code is picked by more than one of `k`
/// terminals choosing uniformly among `g` codes.
pub fn collision_probability(k: usize, g: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let p = 1.0 / g as f64;
    let q = 1.0 - p;
    1.0 - q.powi(k as i32) - k as f64 * q.powi(k as i32 - 1) * p
}
