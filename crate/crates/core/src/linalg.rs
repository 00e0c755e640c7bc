//! Complex matrix helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Cholesky factor of a Hermitian positive definite matrix with its log-determinant.
pub struct HpdFactor {
    chol: Cholesky<Complex64, Dyn>,
    log_det: f64,
}

impl HpdFactor {
    pub fn new(sigma: &CMat) -> Result<Self> {
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
        Ok(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, rhs: &CMat) -> CMat {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &CVec) -> CVec {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> CMat {
        self.chol.inverse()
    }
}

/// `x^H y`.
pub fn dot_h(x: impl IntoIterator<Item = Complex64>, y: impl IntoIterator<Item = Complex64>) -> Complex64 {
    x.into_iter().zip(y).fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
}

/// Scaled identity `value * I_n`.
pub fn scaled_identity(n: usize, value: f64) -> CMat {
    CMat::from_diagonal_element(n, n, Complex64::new(value, 0.0))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Relative Frobenius error `||a - b|| / ||b||`.
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}
