//! Binary ranging codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;

/// An `M x G` matrix of `+1/-1` code chips, stored one code per column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatrix {
    m: usize,
    g: usize,
    chips: Vec<i8>,
}

impl CodeMatrix {
    /// Wraps explicit chips given column by column. Returns `None` if the
    /// length is wrong or any chip is not `+1/-1`.
    pub fn from_columns(m: usize, g: usize, chips: Vec<i8>) -> Option<Self> {
        (chips.len() == m * g && chips.iter().all(|&c| c == 1 || c == -1)).then_some(CodeMatrix {
            m,
            g,
            chips,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn codes(&self) -> usize {
        self.g
    }

    /// Chip `m` of code `code` (both 0-based).
    #[inline]
    pub fn chip(&self, m: usize, code: usize) -> i8 {
        self.chips[code * self.m + m]
    }

    pub fn column(&self, code: usize) -> &[i8] {
        &self.chips[code * self.m..(code + 1) * self.m]
    }
}

/// Seeded Rademacher code matrix; identical for identical `rng_seed`.
pub fn generate_code_matrix(config: &SystemConfig) -> CodeMatrix {
    let (m, g) = (config.m(), config.codes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let chips = (0..m * g)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    CodeMatrix { m, g, chips }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SubcarrierLayout;

    fn small(seed: u64) -> SystemConfig {
        SystemConfig::new(16, 4, 4, 2, 6, 3, SubcarrierLayout::Even, seed).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(
            generate_code_matrix(&small(7)),
            generate_code_matrix(&small(7))
        );
        assert_ne!(
            generate_code_matrix(&small(7)),
            generate_code_matrix(&small(8))
        );
    }

    #[test]
    fn chips_are_binary_and_balanced() {
        let codes = generate_code_matrix(&SystemConfig::wimax_1024());
        assert_eq!((codes.rows(), codes.codes()), (144, 32));
        let mut sum = 0i64;
        for g in 0..32 {
            for m in 0..144 {
                let c = codes.chip(m, g);
                assert!(c == 1 || c == -1);
                sum += c as i64;
            }
        }
        let mean = sum as f64 / 4608.0;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn from_columns_rejects_non_binary() {
        assert!(CodeMatrix::from_columns(2, 1, vec![1, 0]).is_none());
        assert!(CodeMatrix::from_columns(2, 1, vec![1, -1]).is_some());
    }
}
