//! OFDMA and ranging dimensions shared by every stage of the pipeline.
//!
//! A [`SystemConfig`] round-trips through a small TOML file. The ranging
//! subcarrier list may be given explicitly or generated from a named layout.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RangingError, Result};

/// How the `M` ranging subcarriers are placed among the `N` bins when no
/// explicit list is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubcarrierLayout {
    /// `j_m = 1 + (m-1)*floor(N/M)`.
    Even,
    /// `M` distinct bins drawn without replacement from a stream seeded by
    /// `rng_seed`, then sorted.
    #[default]
    Scattered,
}

/// All OFDMA/ranging dimensions.
///
/// Subcarrier indices are 1-based (`1..=n`) as in the standard's numbering;
/// everything else in the crate indexes from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct SystemConfig {
    /// Subcarriers per OFDM symbol (`N`).
    pub n: usize,
    /// Cyclic prefix length in samples (`N_g`).
    pub cp_len: usize,
    /// Number of ranging codes (`G`).
    pub codes: usize,
    /// Sorted, distinct, 1-based ranging subcarrier indices (`j_m`); the
    /// length is `M`.
    pub subcarriers: Vec<usize>,
    /// Exclusive bound on the round-trip delay in samples (`D`).
    pub max_delay: usize,
    /// Maximum channel order in taps (`P_max`).
    pub max_taps: usize,
    /// Truncation length of each per-code channel block (`N_1`).
    pub n1: usize,
    pub rng_seed: u64,
}

#[derive(Deserialize)]
struct RawConfig {
    n: usize,
    cp_len: usize,
    codes: usize,
    #[serde(default)]
    ranging_subcarriers: Option<usize>,
    #[serde(default)]
    subcarriers: Option<Vec<usize>>,
    #[serde(default)]
    layout: SubcarrierLayout,
    max_delay: usize,
    max_taps: usize,
    #[serde(default)]
    n1: Option<usize>,
    #[serde(default)]
    rng_seed: u64,
}

impl SystemConfig {
    /// Builds a config with `m` ranging subcarriers placed by `layout` and
    /// `N_1 = P_max + D`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        cp_len: usize,
        m: usize,
        codes: usize,
        max_delay: usize,
        max_taps: usize,
        layout: SubcarrierLayout,
        rng_seed: u64,
    ) -> Result<Self> {
        let subcarriers = layout_subcarriers(layout, n, m, rng_seed)?;
        let cfg = SystemConfig {
            n,
            cp_len,
            codes,
            subcarriers,
            max_delay,
            max_taps,
            n1: max_taps + max_delay,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The N = 1024 system with 144 ranging subcarriers, 32 codes, a 64 sample
    /// cyclic prefix, D = 186 and P_max = 30.
    pub fn wimax_1024() -> Self {
        Self::new(
            1024,
            64,
            144,
            32,
            186,
            30,
            SubcarrierLayout::default(),
            2024,
        )
        .expect("built-in config is valid")
    }

    /// Number of ranging subcarriers (`M`).
    pub fn m(&self) -> usize {
        self.subcarriers.len()
    }

    /// Length of the stacked unknown `G * N_1`.
    pub fn unknowns(&self) -> usize {
        self.codes * self.n1
    }

    /// Alternative truncation `N_1 = D + N_g`.
    pub fn n1_from_cp(&self) -> usize {
        self.max_delay + self.cp_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RangingError::InvalidConfig(msg));
        let m = self.m();
        if self.n == 0 || m == 0 || self.codes == 0 {
            return bad("N, M and G must all be positive".into());
        }
        if m > self.n {
            return bad(format!("M = {m} exceeds N = {}", self.n));
        }
        if self.subcarriers.iter().any(|&j| j == 0 || j > self.n) {
            return bad(format!("ranging subcarrier index outside 1..={}", self.n));
        }
        if self.subcarriers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ranging subcarriers must be sorted and distinct".into());
        }
        if self.max_delay == 0 || self.max_delay >= self.n {
            return bad(format!("D = {} must satisfy 0 < D < N", self.max_delay));
        }
        if self.max_taps == 0 {
            return bad("P_max must be positive".into());
        }
        if self.n1 == 0 || self.n1 > self.n {
            return bad(format!("N1 = {} must satisfy 0 < N1 <= N", self.n1));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_raw(toml::from_str(text)?)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let subcarriers = match (raw.subcarriers, raw.ranging_subcarriers) {
            (Some(list), _) => list,
            (None, Some(m)) => layout_subcarriers(raw.layout, raw.n, m, raw.rng_seed)?,
            (None, None) => {
                return Err(RangingError::InvalidConfig(
                    "either `subcarriers` or `ranging_subcarriers` is required".into(),
                ))
            }
        };
        let cfg = SystemConfig {
            n: raw.n,
            cp_len: raw.cp_len,
            codes: raw.codes,
            subcarriers,
            max_delay: raw.max_delay,
            max_taps: raw.max_taps,
            n1: raw.n1.unwrap_or(raw.max_taps + raw.max_delay),
            rng_seed: raw.rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

impl TryFrom<RawConfig> for SystemConfig {
    type Error = RangingError;

    fn try_from(raw: RawConfig) -> Result<Self> {
        Self::from_raw(raw)
    }
}

/// Generates 1-based ranging subcarrier indices for a layout.
pub fn layout_subcarriers(
    layout: SubcarrierLayout,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(RangingError::InvalidConfig(format!(
            "cannot place {m} ranging subcarriers among {n}"
        )));
    }
    let list = match layout {
        SubcarrierLayout::Even => {
            let step = n / m;
            (0..m).map(|k| 1 + k * step).collect()
        }
        SubcarrierLayout::Scattered => {
            // Separate stream from the code matrix, which uses stream 0.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut picks: Vec<usize> = index::sample(&mut rng, n, m)
                .into_iter()
                .map(|j| j + 1)
                .collect();
            picks.sort_unstable();
            picks
        }
    };
    Ok(list)
}
