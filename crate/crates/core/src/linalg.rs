//! Small dense helpers shared by the solvers.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

/// Ridge multipliers (relative to the trace) tried when a factorization fails.
const RIDGES: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Solves `M x = b` for Hermitian positive-definite `M` by Cholesky. If the
/// factorization fails a diagonal ridge proportional to the trace is added.
/// Returns `None` when every attempt fails or the solution is not finite.
pub fn hpd_solve<T>(mat: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let n = mat.nrows();
    let trace: f64 = (0..n)
        .map(|i| mat[(i, i)].real())
        .sum::<f64>()
        .abs()
        .max(f64::MIN_POSITIVE);
    for ridge in RIDGES {
        let mut m = mat.clone();
        if ridge > 0.0 {
            let shift = T::from_real(ridge * trace);
            for i in 0..n {
                m[(i, i)] += shift;
            }
        }
        if let Some(chol) = m.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                if ridge > 0.0 {
                    log::debug!("cholesky needed ridge {ridge:e}");
                }
                return Some(x);
            }
        }
    }
    None
}

/// Inverse of a Hermitian positive-definite matrix, with the same ridge
/// fallback as [`hpd_solve`].
pub fn hpd_inverse<T>(mat: &DMatrix<T>) -> Option<DMatrix<T>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let n = mat.nrows();
    let trace: f64 = (0..n)
        .map(|i| mat[(i, i)].real())
        .sum::<f64>()
        .abs()
        .max(f64::MIN_POSITIVE);
    for ridge in RIDGES {
        let mut m = mat.clone();
        if ridge > 0.0 {
            let shift = T::from_real(ridge * trace);
            for i in 0..n {
                m[(i, i)] += shift;
            }
        }
        if let Some(chol) = m.cholesky() {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return Some(inv);
            }
        }
    }
    None
}

/// Makes a nearly Hermitian matrix exactly Hermitian.
pub fn hermitize(mat: &mut DMatrix<Complex64>) {
    let n = mat.nrows();
    for j in 0..n {
        mat[(j, j)].im = 0.0;
        for i in 0..j {
            let v = 0.5 * (mat[(i, j)] + mat[(j, i)].conj());
            mat[(i, j)] = v;
            mat[(j, i)] = v.conj();
        }
    }
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm(v: &[Complex64]) -> f64 {
    norm_sqr(v).sqrt()
}

pub fn norm_inf(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

pub fn norm1(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).sum()
}

/// `a - b` elementwise.
pub fn sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + s b` elementwise.
pub fn axpy(a: &[Complex64], s: f64, b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x + y * s).collect()
}

/// Relative distance `||a - b|| / ||b||` (absolute when `b = 0`).
pub fn rel_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d = norm(&sub(a, b));
    let r = norm(b);
    if r > 0.0 {
        d / r
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_hermitian_system() {
        let b = DMatrix::from_fn(4, 4, |i, j| {
            Complex64::new((i + 2 * j) as f64 * 0.3 - 1.0, (i as f64 - j as f64) * 0.2)
        });
        let mut m = &b * b.adjoint();
        for i in 0..4 {
            m[(i, i)] += Complex64::new(1.0, 0.0);
        }
        let x = DVector::from_fn(4, |i, _| Complex64::new(i as f64, 1.0));
        let rhs = &m * &x;
        let got = hpd_solve(&m, &rhs).unwrap();
        assert!((got - x).norm() < 1e-10);
    }

    #[test]
    fn singular_system_gets_ridge() {
        let m = DMatrix::from_element(3, 3, 1.0f64);
        let rhs = DVector::from_element(3, 1.0);
        let x = hpd_solve(&m, &rhs).unwrap();
        assert!(((&m * &x) - rhs).norm() < 1e-3);
    }

    #[test]
    fn norms() {
        let v = [Complex64::new(3.0, 4.0), Complex64::new(0.0, -1.0)];
        assert_eq!(norm_inf(&v), 5.0);
        assert_eq!(norm1(&v), 6.0);
        assert!((norm(&v) - 26f64.sqrt()).abs() < 1e-15);
        assert_eq!(dot(&v, &v), Complex64::new(26.0, 0.0));
    }
}
