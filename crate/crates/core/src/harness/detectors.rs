//! Detector identifiers and the runnable detectors behind them.

use std::fmt;
use std::str::FromStr;

use crate::covstats::ExpertKind;
use crate::data::Deployment;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::moe::{GateParams, HIDDEN1, HIDDEN2};
use crate::solvers::{cd_solve, pgd_solve, CdOptions, PgdOptions};
use crate::unfolding::{unfolded_forward, UnfoldedParams};

/// Parsed `--detector` value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorSpec {
    Cd,
    Pgd(ExpertKind),
    Unfolded(ExpertKind),
    UnfoldedMoe,
}

impl DetectorSpec {
    pub fn needs_unfolded(self) -> bool {
        matches!(self, DetectorSpec::Unfolded(_) | DetectorSpec::UnfoldedMoe)
    }

    pub fn needs_gate(self) -> bool {
        self == DetectorSpec::UnfoldedMoe
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorSpec::Cd => write!(f, "cd"),
            DetectorSpec::Pgd(k) => write!(f, "pgd:{}", k.name()),
            DetectorSpec::Unfolded(k) => write!(f, "unfold:{}", k.name()),
            DetectorSpec::UnfoldedMoe => write!(f, "unfold:moe"),
        }
    }
}

impl FromStr for DetectorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown detector '{s}' (expected cd, pgd:<expert>, unfold:<expert|moe>)"));
        if s == "cd" {
            return Ok(DetectorSpec::Cd);
        }
        let (family, arg) = s.split_once(':').ok_or_else(bad)?;
        match (family, arg) {
            ("unfold", "moe") => Ok(DetectorSpec::UnfoldedMoe),
            ("pgd", e) => ExpertKind::parse(e).map(DetectorSpec::Pgd).ok_or_else(bad),
            ("unfold", e) => ExpertKind::parse(e).map(DetectorSpec::Unfolded).ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// A detector with everything it needs to run.
#[derive(Clone, Debug)]
pub enum Detector {
    Cd(CdOptions),
    Pgd(PgdOptions),
    Unfolded { params: UnfoldedParams, expert: ExpertKind },
    UnfoldedMoe { params: UnfoldedParams, gate: Box<GateParams> },
}

/// Output of one detection.
#[derive(Clone, Debug)]
pub struct Detection {
    pub a_hat: Vec<f64>,
    /// Complex multiply-adds spent, from a per-detector operation-count model.
    pub work: f64,
}

impl Detector {
    /// Learned detectors fail with [`Error::MissingCheckpoint`] when their parameters are absent.
    pub fn build(spec: DetectorSpec, unfolded: Option<&UnfoldedParams>, gate: Option<&GateParams>) -> Result<Self> {
        let need_unfold = || unfolded.cloned().ok_or_else(|| Error::MissingCheckpoint(format!("{spec} needs an unfolded-network checkpoint")));
        Ok(match spec {
            DetectorSpec::Cd => Detector::Cd(CdOptions::default()),
            DetectorSpec::Pgd(expert) => Detector::Pgd(PgdOptions { expert, ..PgdOptions::default() }),
            DetectorSpec::Unfolded(expert) => Detector::Unfolded { params: need_unfold()?, expert },
            DetectorSpec::UnfoldedMoe => {
                let gate = gate.cloned().ok_or_else(|| Error::MissingCheckpoint(format!("{spec} needs a gate checkpoint")))?;
                Detector::UnfoldedMoe { params: need_unfold()?, gate: Box::new(gate) }
            }
        })
    }

    pub fn spec(&self) -> DetectorSpec {
        match self {
            Detector::Cd(_) => DetectorSpec::Cd,
            Detector::Pgd(o) => DetectorSpec::Pgd(o.expert),
            Detector::Unfolded { expert, .. } => DetectorSpec::Unfolded(*expert),
            Detector::UnfoldedMoe { .. } => DetectorSpec::UnfoldedMoe,
        }
    }

    pub fn id(&self) -> String {
        self.spec().to_string()
    }

    /// Expert the detector would use on `y`, if it is a covariance-model detector.
    pub fn expert_for(&self, y: &CMat) -> Option<ExpertKind> {
        match self {
            Detector::Cd(_) => None,
            Detector::Pgd(o) => Some(o.expert),
            Detector::Unfolded { expert, .. } => Some(*expert),
            Detector::UnfoldedMoe { gate, .. } => Some(gate.select(y)),
        }
    }

    pub fn detect(&self, y: &CMat, dep: &Deployment) -> Result<Detection> {
        let cfg = dep.config();
        let (l, m, k) = (cfg.signature_len as f64, cfg.antennas as f64, cfg.devices as f64);
        // one likelihood evaluation: build, factor and solve per antenna
        let eval_cost = m * (2.0 * l * l * k + l * l * l / 3.0 + l * k);
        let layer_cost = m * (2.0 * l * l * k + l * l * l + 2.0 * l * l + 3.0 * l * k);
        match self {
            Detector::Cd(opts) => {
                let r = cd_solve(y, dep.model(ExpertKind::Expert3), opts)?;
                let work = l * l * m + r.passes as f64 * k * 3.0 * l * l;
                Ok(Detection { a_hat: r.a_hat, work })
            }
            Detector::Pgd(opts) => {
                let r = pgd_solve(y, dep.model(opts.expert), opts)?;
                Ok(Detection { a_hat: r.a_hat, work: r.evaluations as f64 * eval_cost })
            }
            Detector::Unfolded { params, expert } => {
                let a_hat = unfolded_forward(y, params, dep.model(*expert))?;
                Ok(Detection { a_hat, work: params.depth() as f64 * layer_cost })
            }
            Detector::UnfoldedMoe { params, gate } => {
                let expert = gate.select(y);
                let a_hat = unfolded_forward(y, params, dep.model(expert))?;
                let gate_cost = (2.0 * l * m * HIDDEN1 as f64 + (HIDDEN1 * HIDDEN2) as f64 + 3.0 * HIDDEN2 as f64) / 4.0;
                Ok(Detection { a_hat, work: params.depth() as f64 * layer_cost + gate_cost })
            }
        }
    }
}
