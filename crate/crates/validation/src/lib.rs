//! Independent oracles and fixtures for checking `ranging-core`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use ranging_core::channel::complex_gaussian;
use ranging_core::{DenseOperator, SubcarrierLayout, SystemConfig};

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// `m x n` matrix with i.i.d. `CN(0, 1/m)` entries.
pub fn gaussian_operator<R: Rng>(m: usize, n: usize, rng: &mut R) -> DenseOperator {
    let var = 1.0 / m as f64;
    DenseOperator::new(DMatrix::from_fn(m, n, |_, _| complex_gaussian(rng, var)))
}

/// `k`-sparse vector of length `n` with `CN(0, 1)` nonzeros.
pub fn sparse_vector<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Complex64> {
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let support = rand::seq::index::sample(rng, n, k);
    for i in support.iter() {
        x[i] = complex_gaussian(rng, 1.0);
    }
    x
}

/// Complex basis pursuit, `min ||x||_1` subject to `A x = y`, as a
/// second-order cone program over `[t; Re x; Im x]`.
pub fn basis_pursuit(a: &DMatrix<Complex64>, y: &[Complex64]) -> Vec<Complex64> {
    let (m, n) = a.shape();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut push = |r: usize, c: usize, v: f64| {
        if v != 0.0 {
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
    };
    // Re(A x) = Re y and Im(A x) = Im y
    for i in 0..m {
        for j in 0..n {
            let v = a[(i, j)];
            push(i, n + j, v.re);
            push(i, 2 * n + j, -v.im);
            push(m + i, n + j, v.im);
            push(m + i, 2 * n + j, v.re);
        }
    }
    // (t_j, Re x_j, Im x_j) in the second-order cone
    for j in 0..n {
        let r = 2 * m + 3 * j;
        push(r, j, -1.0);
        push(r + 1, n + j, -1.0);
        push(r + 2, 2 * n + j, -1.0);
    }
    let nvar = 3 * n;
    let ncons = 2 * m + 3 * n;
    let a_mat = CscMatrix::new_from_triplets(ncons, nvar, rows, cols, vals);
    let p = CscMatrix::zeros((nvar, nvar));
    let mut q = vec![0.0; nvar];
    q[..n].fill(1.0);
    let mut b = vec![0.0; ncons];
    for i in 0..m {
        b[i] = y[i].re;
        b[m + i] = y[i].im;
    }
    let mut cones = vec![SupportedConeT::ZeroConeT(2 * m)];
    cones.extend((0..n).map(|_| SupportedConeT::SecondOrderConeT(3)));
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-12,
        tol_gap_rel: 1e-12,
        tol_feas: 1e-12,
        max_iter: 400,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a_mat, &b, &cones, settings).expect("valid SOCP");
    solver.solve();
    assert!(
        matches!(
            solver.solution.status,
            SolverStatus::Solved | SolverStatus::AlmostSolved
        ),
        "oracle status {:?}",
        solver.solution.status
    );
    let x = &solver.solution.x;
    (0..n)
        .map(|j| Complex64::new(x[n + j], x[2 * n + j]))
        .collect()
}

/// Samples of `sigma_e2 * sum_k lambda_k E_k` with `E_k ~ Exp(1)`.
pub fn gchi2_samples<R: Rng>(lambda: &[f64], sigma_e2: f64, count: usize, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            sigma_e2
                * lambda
                    .iter()
                    .map(|l| {
                        let a: f64 = StandardNormal.sample(rng);
                        let b: f64 = StandardNormal.sample(rng);
                        l * 0.5 * (a * a + b * b)
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Small systems for exhaustive sweeps: `M = N / 4`, `D = N / 8`, three taps.
pub fn toy_config(n: usize, codes: usize, seed: u64) -> SystemConfig {
    SystemConfig::new(
        n,
        n / 8,
        n / 4,
        codes,
        n / 8,
        3,
        SubcarrierLayout::default(),
        seed,
    )
    .expect("toy config is valid")
}

/// The reduced system used for long noise-only runs.
pub fn reduced_config() -> SystemConfig {
    SystemConfig::new(256, 16, 48, 8, 24, 8, SubcarrierLayout::default(), 7)
        .expect("reduced config is valid")
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
