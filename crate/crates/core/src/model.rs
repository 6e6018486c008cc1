//! The ranging measurement model `y = A x + e`.
//!
//! Code `l` maps a channel `h` (first `N_1` taps of the delayed impulse
//! response) to the ranging bins through
//!
//! ```text
//! E_l = Theta diag(Theta^T c_l) W,    W[k, q] = exp(-i 2 pi k q / N)
//! ```
//!
//! where `Theta` selects the ranging subcarriers and `W` is the unnormalized
//! DFT matrix (`sqrt(N)` times the unitary one). With the unitary FFT at the
//! receiver this is exactly what the time-domain convolution produces, so
//! the noise variance per ranging bin equals the per-subcarrier noise
//! variance. `A` stacks the first `N_1` columns of every `E_l`.
//!
//! Products with `A`, `A^*` and the weighted Gram matrices are all done with
//! length-`N` FFTs, one per code.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::codes::{generate_code_matrix, CodeMatrix};
use crate::config::SystemConfig;
use crate::operator::SensingOperator;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub struct MeasurementModel {
    config: SystemConfig,
    codes: CodeMatrix,
    /// 0-based FFT bin of each ranging subcarrier (`j_m - 1`).
    bins: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MeasurementModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurementModel")
            .field("n", &self.config.n)
            .field("m", &self.bins.len())
            .field("codes", &self.config.codes)
            .field("n1", &self.config.n1)
            .finish()
    }
}

/// Builds the stacked measurement model from a config and code matrix.
pub fn build_a(config: &SystemConfig, codes: &CodeMatrix) -> MeasurementModel {
    MeasurementModel::new(config.clone(), codes.clone())
}

impl MeasurementModel {
    pub fn new(config: SystemConfig, codes: CodeMatrix) -> Self {
        assert_eq!(codes.rows(), config.m(), "code length must equal M");
        assert_eq!(codes.codes(), config.codes, "code count must equal G");
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(config.n);
        let ifft = planner.plan_fft_inverse(config.n);
        let bins = config.subcarriers.iter().map(|j| j - 1).collect();
        MeasurementModel {
            config,
            codes,
            bins,
            fft,
            ifft,
        }
    }

    /// Model with the seeded code matrix of `config`.
    pub fn from_config(config: &SystemConfig) -> Self {
        let codes = generate_code_matrix(config);
        Self::new(config.clone(), codes)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn n1(&self) -> usize {
        self.config.n1
    }

    pub fn code_count(&self) -> usize {
        self.config.codes
    }

    /// Entry `(m, q)` of `E_code`: `c[m] exp(-i 2 pi (j_m - 1) q / N)`.
    pub fn entry(&self, m: usize, code: usize, q: usize) -> Complex64 {
        let n = self.config.n;
        let k = (self.bins[m] * q) % n;
        let phase = -2.0 * PI * k as f64 / n as f64;
        Complex64::from_polar(self.codes.chip(m, code) as f64, phase)
    }

    /// `E_code` restricted to its first `cols` columns.
    pub fn build_e(&self, code: usize, cols: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.bins.len(), cols, |m, q| self.entry(m, code, q))
    }

    /// Block `code` of `A` (`E_code(:, 1:N_1)`).
    pub fn block(&self, code: usize) -> DMatrix<Complex64> {
        self.build_e(code, self.config.n1)
    }

    /// `E_code h` for a channel of any length up to `N`.
    pub fn apply_code(&self, code: usize, h: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.config.n];
        buf[..h.len()].copy_from_slice(h);
        self.fft.process(&mut buf);
        self.bins
            .iter()
            .enumerate()
            .map(|(m, &k)| buf[k] * self.codes.chip(m, code) as f64)
            .collect()
    }

    /// `E_code(:, 1:N_1)^* v`.
    pub fn adjoint_code(&self, code: usize, v: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.config.n];
        for (m, &k) in self.bins.iter().enumerate() {
            buf[k] = v[m] * self.codes.chip(m, code) as f64;
        }
        self.ifft.process(&mut buf);
        buf.truncate(self.config.n1);
        buf
    }

    /// Length-`N` FFT of `d` zero-padded, for Gram assembly.
    fn spectrum(&self, d: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.config.n];
        for (b, v) in buf.iter_mut().zip(d) {
            *b = v;
        }
        self.fft.process(&mut buf);
        buf
    }

    /// `E_code diag(d) E_code^*` for real weights on one block.
    pub fn block_gram(&self, code: usize, d: &[f64]) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.bins.len(), self.bins.len());
        self.accumulate_gram(&mut out, code, d);
        mirror_upper(&mut out);
        out
    }

    fn accumulate_gram(&self, out: &mut DMatrix<Complex64>, code: usize, d: &[f64]) {
        let n = self.config.n;
        let spec = self.spectrum(d.iter().map(|&v| Complex64::new(v, 0.0)));
        let chips = self.codes.column(code);
        let m = self.bins.len();
        for j in 0..m {
            let (bj, cj) = (self.bins[j], chips[j]);
            let mut col = out.column_mut(j);
            for i in 0..=j {
                let k = (self.bins[i] + n - bj) % n;
                if chips[i] == cj {
                    col[i] += spec[k];
                } else {
                    col[i] -= spec[k];
                }
            }
        }
    }
}

/// Fills the strict lower triangle with conjugates of the upper one.
fn mirror_upper(mat: &mut DMatrix<Complex64>) {
    let m = mat.nrows();
    for j in 0..m {
        mat[(j, j)].im = 0.0;
        for i in 0..j {
            mat[(j, i)] = mat[(i, j)].conj();
        }
    }
}

impl SensingOperator for MeasurementModel {
    fn rows(&self) -> usize {
        self.bins.len()
    }

    fn cols(&self) -> usize {
        self.config.unknowns()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n1 = self.config.n1;
        let mut y = vec![ZERO; self.bins.len()];
        for (code, block) in x.chunks(n1).enumerate() {
            if block.iter().all(|v| *v == ZERO) {
                continue;
            }
            for (yi, v) in y.iter_mut().zip(self.apply_code(code, block)) {
                *yi += v;
            }
        }
        y
    }

    fn adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.cols());
        for code in 0..self.config.codes {
            out.extend(self.adjoint_code(code, v));
        }
        out
    }

    fn weighted_gram(&self, d: &[f64]) -> DMatrix<Complex64> {
        let n1 = self.config.n1;
        let mut out = DMatrix::zeros(self.bins.len(), self.bins.len());
        for (code, block) in d.chunks(n1).enumerate() {
            if block.iter().any(|v| *v != 0.0) {
                self.accumulate_gram(&mut out, code, block);
            }
        }
        mirror_upper(&mut out);
        out
    }

    fn weighted_gram_transpose(&self, d: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.config.n;
        let n1 = self.config.n1;
        let m = self.bins.len();
        let mut out = DMatrix::zeros(m, m);
        for (code, block) in d.chunks(n1).enumerate() {
            let spec = self.spectrum(block.iter().copied());
            let chips = self.codes.column(code);
            for j in 0..m {
                let (bj, cj) = (self.bins[j], chips[j]);
                let mut col = out.column_mut(j);
                for i in 0..=j {
                    let k = (self.bins[i] + bj) % n;
                    if chips[i] == cj {
                        col[i] += spec[k];
                    } else {
                        col[i] -= spec[k];
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                out[(j, i)] = out[(i, j)];
            }
        }
        out
    }

    fn to_dense(&self) -> DMatrix<Complex64> {
        let n1 = self.config.n1;
        DMatrix::from_fn(self.bins.len(), self.cols(), |m, col| {
            self.entry(m, col / n1, col % n1)
        })
    }

    fn column(&self, j: usize) -> Vec<Complex64> {
        let n1 = self.config.n1;
        (0..self.bins.len())
            .map(|m| self.entry(m, j / n1, j % n1))
            .collect()
    }
}

/// Unitary DFT matrix, `F[k, q] = exp(-i 2 pi k q / N) / sqrt(N)`.
pub fn unitary_dft(n: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |k, q| {
        Complex64::from_polar(scale, -2.0 * PI * ((k * q) % n) as f64 / n as f64)
    })
}
