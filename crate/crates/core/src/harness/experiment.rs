//! Monte Carlo orchestration, the group-mix sweep and latency measurement.

use std::time::Instant;

use rayon::prelude::*;

use crate::covstats::ExpertKind;
use crate::data::{Deployment, Frame};
use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::ScenarioConfig;

use super::detectors::Detector;
use super::metrics::{equal_error_rate, DetectionResult, EqualErrorRate};

/// Pooled results of one detector.
#[derive(Clone, Debug)]
pub struct DetectorRun {
    pub detector: String,
    pub results: Vec<DetectionResult>,
    /// Per-trial operation counts from [`super::detectors::Detection::work`].
    pub work: Vec<f64>,
    /// How often each expert (by [`ExpertKind::index`]) was used.
    pub expert_counts: [usize; 4],
}

impl DetectorRun {
    pub fn mean_seconds(&self) -> f64 {
        self.results.iter().map(|r| r.seconds).sum::<f64>() / self.results.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub runs: Vec<DetectorRun>,
}

impl MonteCarloReport {
    pub fn run(&self, id: &str) -> Option<&DetectorRun> {
        self.runs.iter().find(|r| r.detector == id)
    }
}

/// Frames `0..trials` of `dep` under `seed`; frame `t` depends only on `(seed, t)`.
pub fn draw_trials(dep: &Deployment, trials: usize, seed: u64) -> Result<Vec<Frame>> {
    (0..trials).into_par_iter().map(|t| dep.draw_frame(&mut rng::trial(seed, t as u64))).collect()
}

/// Runs every detector on the same `trials` frames of one deployment built from `config`.
pub fn run_monte_carlo(config: &ScenarioConfig, detectors: &[Detector], trials: usize, seed: u64) -> Result<MonteCarloReport> {
    let dep = Deployment::new(config)?;
    run_on_deployment(&dep, detectors, trials, seed)
}

pub fn run_on_deployment(dep: &Deployment, detectors: &[Detector], trials: usize, seed: u64) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let frames = draw_trials(dep, trials, seed)?;
    let runs = detectors
        .iter()
        .map(|det| {
            let id = det.id();
            let out: Vec<(DetectionResult, f64, Option<ExpertKind>)> = frames
                .par_iter()
                .map(|f| {
                    let start = Instant::now();
                    let d = det.detect(&f.y, dep)?;
                    let seconds = start.elapsed().as_secs_f64();
                    let result = DetectionResult { a_hat: d.a_hat, b_true: f.b.clone(), detector: id.clone(), seconds };
                    Ok((result, d.work, det.expert_for(&f.y)))
                })
                .collect::<Result<_>>()?;
            let mut expert_counts = [0; 4];
            for (_, _, e) in &out {
                if let Some(e) = e {
                    expert_counts[e.index()] += 1;
                }
            }
            let (results, work) = out.into_iter().map(|(r, w, _)| (r, w)).unzip();
            Ok(DetectorRun { detector: id, results, work, expert_counts })
        })
        .collect::<Result<_>>()?;
    Ok(MonteCarloReport { trials, runs })
}

/// One cell of the group-mix sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub detector: String,
    pub k1_fraction: f64,
    pub eer: EqualErrorRate,
    pub expert_counts: [usize; 4],
}

/// Equal-error rate per (detector, IRS-assisted fraction); the remaining devices
/// are split equally between the two direct groups.
pub fn sweep_group_mix(
    config: &ScenarioConfig,
    detectors: &[Detector],
    k1_fractions: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &f in k1_fractions {
        if !(0.0..=0.8).contains(&f) {
            return Err(Error::Config(format!("IRS-assisted fraction {f} outside [0, 0.8]")));
        }
        let report = run_monte_carlo(&config.clone().with_irs_fraction(f), detectors, trials, seed)?;
        for run in report.runs {
            let eer = equal_error_rate(&run.results)?;
            out.push(SweepPoint { detector: run.detector, k1_fraction: f, eer, expert_counts: run.expert_counts });
        }
    }
    Ok(out)
}

/// Nominal throughput used to turn operation counts into latencies.
pub const NOMINAL_MACS_PER_SECOND: f64 = 1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub detector: String,
    pub k1_fraction: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Nearest-rank 95th percentile.
pub fn p95(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Per-inference latency per detector at each mix. Timed runs execute one
/// detection at a time; with `deterministic` the latency is the operation
/// count at [`NOMINAL_MACS_PER_SECOND`] instead of the wall clock.
pub fn bench(
    config: &ScenarioConfig,
    detectors: &[Detector],
    k1_fractions: &[f64],
    trials: usize,
    seed: u64,
    deterministic: bool,
) -> Result<Vec<BenchRow>> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &f in k1_fractions {
        let dep = Deployment::new(&config.clone().with_irs_fraction(f))?;
        let frames = draw_trials(&dep, trials, seed)?;
        for det in detectors {
            let ms: Vec<f64> = if deterministic {
                frames
                    .par_iter()
                    .map(|fr| Ok(det.detect(&fr.y, &dep)?.work / NOMINAL_MACS_PER_SECOND * 1e3))
                    .collect::<Result<_>>()?
            } else {
                frames
                    .iter()
                    .map(|fr| {
                        let start = Instant::now();
                        det.detect(&fr.y, &dep)?;
                        Ok(start.elapsed().as_secs_f64() * 1e3)
                    })
                    .collect::<Result<_>>()?
            };
            let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
            rows.push(BenchRow { detector: det.id(), k1_fraction: f, mean_ms, p95_ms: p95(&ms) });
        }
    }
    Ok(rows)
}
