use crate::covstats::{ExpertKind, ModelContext};
use crate::error::{Error, Result};
use crate::linalg::CMat;

use super::gradient::{objective_and_gradient, project_nonnegative};

/// Stepsize selection for projected gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Armijo backtracking along the projection arc.
    Backtracking { initial: f64, shrink: f64, armijo: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking { initial: 1.0, shrink: 0.5, armijo: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdOptions {
    pub max_iters: usize,
    pub step: StepRule,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub expert: ExpertKind,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self { max_iters: 500, step: StepRule::default(), tol: 1e-8, expert: ExpertKind::PerfectGrouping }
    }
}

impl PgdOptions {
    pub fn validate(&self) -> Result<()> {
        match self.step {
            StepRule::Fixed(eta) if !(eta > 0.0) => Err(Error::Config(format!("fixed step must be positive, got {eta}"))),
            StepRule::Backtracking { initial, shrink, armijo }
                if !(initial > 0.0) || !(shrink > 0.0 && shrink < 1.0) || !(armijo > 0.0 && armijo < 1.0) =>
            {
                Err(Error::Config("backtracking needs initial > 0, 0 < shrink < 1, 0 < c < 1".into()))
            }
            _ if !(self.tol >= 0.0) => Err(Error::Config("tolerance must be non-negative".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgdResult {
    pub a_hat: Vec<f64>,
    /// Objective at the starting point followed by one value per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Objective evaluations, including rejected backtracking trials.
    pub evaluations: usize,
}

const MAX_BACKTRACKS: usize = 80;

fn finite(value: f64, iter: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("objective became {value} at iteration {iter}")))
    }
}

/// Projected gradient descent `a <- max(a - eta d, 0)` from `a = 0`.
pub fn pgd_solve(y: &CMat, model: &ModelContext, opts: &PgdOptions) -> Result<PgdResult> {
    opts.validate()?;
    let owned;
    let model = if model.expert() == opts.expert {
        model
    } else {
        owned = model.with_expert(opts.expert)?;
        &owned
    };
    let k = model.devices();
    let mut a = vec![0.0; k];
    let (mut value, mut grad) = objective_and_gradient(y, &a, model)?;
    finite(value, 0)?;
    let mut trace = vec![value];
    let mut iterations = 0;
    let mut evaluations = 1;

    for iter in 1..=opts.max_iters {
        let step_to = |eta: f64| -> Vec<f64> {
            a.iter().zip(&grad).map(|(x, d)| project_nonnegative(x - eta * d)).collect()
        };
        let next = match opts.step {
            StepRule::Fixed(eta) => {
                let cand = step_to(eta);
                let (v, g) = objective_and_gradient(y, &cand, model)?;
                evaluations += 1;
                Some((cand, finite(v, iter)?, g))
            }
            StepRule::Backtracking { initial, shrink, armijo } => {
                let mut eta = initial;
                let mut accepted = None;
                for _ in 0..MAX_BACKTRACKS {
                    let cand = step_to(eta);
                    let slope: f64 = cand.iter().zip(&a).zip(&grad).map(|((c, x), d)| d * (c - x)).sum();
                    if slope == 0.0 {
                        // projected gradient vanishes: stationary
                        break;
                    }
                    let v = model.nll(y, &cand)?;
                    evaluations += 1;
                    if v.is_finite() && v <= value + armijo * slope {
                        let (v, g) = objective_and_gradient(y, &cand, model)?;
                        accepted = Some((cand, v, g));
                        break;
                    }
                    eta *= shrink;
                }
                accepted
            }
        };
        let Some((cand, v, g)) = next else { break };
        let decrease = (value - v) / value.abs().max(1.0);
        a = cand;
        value = v;
        grad = g;
        trace.push(value);
        iterations = iter;
        if decrease.abs() < opts.tol {
            break;
        }
    }
    Ok(PgdResult { a_hat: a, trace, iterations, evaluations })
}
