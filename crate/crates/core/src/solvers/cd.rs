use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::covstats::ModelContext;
use crate::error::{Error, Result};
use crate::linalg::{scaled_identity, CMat, HpdFactor};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdOptions {
    pub max_passes: usize,
    /// Stop once a full pass lowers the objective by less than this (relative).
    pub tol: f64,
    /// Seed of the coordinate-order shuffle.
    pub seed: u64,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { max_passes: 100, tol: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct CdResult {
    /// Per-device variance estimates of the zero-mean model.
    pub a_hat: Vec<f64>,
    pub passes: usize,
    /// Objective after each pass (first entry at the start).
    pub trace: Vec<f64>,
}

/// Coordinate descent on the zero-mean model
/// `Sigma = sum_k gamma_k s_k s_k^H + sigma^2 I` against the sample covariance
/// `Y Y^H / M`, keeping `Sigma^{-1}` current with rank-one updates.
pub struct CdSolver<'a> {
    s: &'a CMat,
    noise_power: f64,
    antennas: usize,
    sample_cov: CMat,
    gamma: Vec<f64>,
    sigma_inv: CMat,
}

impl<'a> CdSolver<'a> {
    pub fn new(y: &CMat, model: &'a ModelContext) -> Result<Self> {
        model.check_inputs(y, &vec![0.0; model.devices()])?;
        let m = y.ncols();
        let sample_cov = (y * y.adjoint()) / Complex64::new(m as f64, 0.0);
        let l = model.signature_len();
        Ok(Self {
            s: &model.s,
            noise_power: model.noise_power,
            antennas: m,
            sample_cov,
            gamma: vec![0.0; model.devices()],
            sigma_inv: scaled_identity(l, 1.0 / model.noise_power),
        })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma_inv(&self) -> &CMat {
        &self.sigma_inv
    }

    pub fn covariance(&self) -> CMat {
        let mut sigma = scaled_identity(self.s.nrows(), self.noise_power);
        for (k, g) in self.gamma.iter().enumerate() {
            if *g != 0.0 {
                let s = self.s.column(k);
                sigma += s * s.adjoint() * Complex64::new(*g, 0.0);
            }
        }
        sigma
    }

    /// `M (log|Sigma| + tr(Sigma^{-1} Sigma_hat))` from a fresh factorization.
    pub fn objective(&self) -> Result<f64> {
        let factor = HpdFactor::new(&self.covariance())?;
        let inv_cov = factor.solve(&self.sample_cov);
        Ok(self.antennas as f64 * (factor.log_det() + inv_cov.trace().re))
    }

    /// Closed-form minimization along coordinate `k`; returns the applied change.
    pub fn update(&mut self, k: usize) -> f64 {
        let s = self.s.column(k);
        let u = &self.sigma_inv * s;
        let quad = s.dotc(&u).re;
        let proj = u.dotc(&(&self.sample_cov * &u)).re;
        let delta = ((proj - quad) / (quad * quad)).max(-self.gamma[k]);
        if delta != 0.0 {
            let denom = 1.0 + delta * quad;
            self.sigma_inv -= &u * u.adjoint() * Complex64::new(delta / denom, 0.0);
            self.gamma[k] += delta;
            if self.gamma[k] < 0.0 {
                self.gamma[k] = 0.0;
            }
        }
        delta
    }

    /// One sweep over all coordinates in the given order.
    pub fn pass(&mut self, order: &[usize]) {
        for &k in order {
            self.update(k);
        }
    }
}

/// Coordinate-descent baseline; returns the per-device variance estimates.
pub fn cd_solve(y: &CMat, model: &ModelContext, opts: &CdOptions) -> Result<CdResult> {
    if opts.max_passes == 0 {
        return Err(Error::Config("coordinate descent needs at least one pass".into()));
    }
    let mut solver = CdSolver::new(y, model)?;
    let mut rng = SimRng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..model.devices()).collect();
    let mut value = solver.objective()?;
    let mut trace = vec![value];
    let mut passes = 0;
    for _ in 0..opts.max_passes {
        order.shuffle(&mut rng);
        solver.pass(&order);
        passes += 1;
        let next = solver.objective()?;
        if !next.is_finite() {
            return Err(Error::Numerical(format!("coordinate descent objective became {next} in pass {passes}")));
        }
        trace.push(next);
        let decrease = (value - next) / value.abs().max(1.0);
        value = next;
        if decrease < opts.tol {
            break;
        }
    }
    Ok(CdResult { a_hat: solver.gamma, passes, trace })
}
