//! Deployments and frames in working units, and the datasets the learned
//! components train on.
//!
//! Working units divide every received signal and every activity by the
//! noise standard deviation, so the noise power seen by the detectors is 1
//! regardless of the physical link budget.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::channel::{generate_phase_shifts, sample_channels, LosComponents};
use crate::covstats::{ExpertKind, ModelContext};
use crate::error::Result;
use crate::linalg::CMat;
use crate::rng::{self, streams};
use crate::scenario::{build_scenario, sample_activity, DeviceGroup, ScenarioConfig, ScenarioRealization};
use crate::signal::{generate_signatures, synthesize_received};

/// IRS-assisted fractions of the group-mix sweep.
pub const SWEEP_FRACTIONS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// A placed scenario with its fixed signatures and IRS phases.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub scenario: ScenarioRealization,
    pub los: LosComponents,
    pub theta: Vec<num_complex::Complex64>,
    /// Physical amplitude of one working unit.
    pub unit: f64,
    /// `sqrt(p beta_median)` in working units; training errors are divided by it.
    pub loss_scale: f64,
    models: Vec<ModelContext>,
}

impl Deployment {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let scenario = build_scenario(config)?;
        let los = LosComponents::from_scenario(&scenario);
        let theta = generate_phase_shifts(config.irs_elements, &mut rng::stream(config.seed, streams::PHASES));
        let s = generate_signatures(
            config.devices,
            config.signature_len,
            &mut rng::stream(config.seed, streams::SIGNATURES),
        );
        let unit = config.noise_power.sqrt();
        let loss_scale = (config.tx_power * scenario.median_beta()).sqrt() / unit;
        let perfect = ModelContext::from_scenario(&scenario, &los, &theta, &s, 1.0)?;
        let models = ExpertKind::ALL.iter().map(|&k| perfect.with_expert(k)).collect::<Result<_>>()?;
        Ok(Self { scenario, los, theta, unit, loss_scale, models })
    }

    /// Likelihood model under `kind`, in working units.
    pub fn model(&self, kind: ExpertKind) -> &ModelContext {
        &self.models[kind.index()]
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.scenario.config
    }

    /// Group shares of the placed devices.
    pub fn proportions(&self) -> [f64; 3] {
        let k = self.scenario.devices() as f64;
        self.scenario.group_counts().map(|c| c as f64 / k)
    }

    /// Fresh activity, fading and noise.
    pub fn draw_frame<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Frame> {
        let activity = sample_activity(&self.scenario, rng);
        let channels = sample_channels(&self.scenario, &self.los, &self.theta, rng)?;
        let y = synthesize_received(&self.scenario, &channels, &activity, &self.model(ExpertKind::PerfectGrouping).s, rng)?;
        let inv = 1.0 / self.unit;
        Ok(Frame { y: y * num_complex::Complex64::new(inv, 0.0), a: activity.a.iter().map(|x| x * inv).collect(), b: activity.b })
    }
}

/// One received frame in working units with its ground truth.
#[derive(Clone, Debug)]
pub struct Frame {
    /// L x M.
    pub y: CMat,
    pub a: Vec<f64>,
    pub b: Vec<bool>,
}

/// How group proportions vary across the deployments of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixPolicy {
    /// Every deployment uses the base configuration's proportions.
    Fixed,
    /// Alternates sweep-grid mixes (remainder split equally) with uniform draws on the simplex.
    Varied,
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub samples: usize,
    pub frames_per_deployment: usize,
    pub mix: MixPolicy,
    pub seed: u64,
}

/// Frames drawn over several independently placed deployments.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub deployments: Vec<Deployment>,
    /// `(deployment index, frame)`.
    pub frames: Vec<(usize, Frame)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn deployment_of(&self, i: usize) -> &Deployment {
        &self.deployments[self.frames[i].0]
    }
}

/// Proportions with `irs_fraction` in the first group and the rest split equally.
pub fn sweep_mix(irs_fraction: f64) -> [f64; 3] {
    let rest = 0.5 * (1.0 - irs_fraction);
    [irs_fraction, rest, rest]
}

fn uniform_simplex<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let e: [f64; 3] = std::array::from_fn(|_| rng.sample(Exp1));
    let total: f64 = e.iter().sum();
    e.map(|x| x / total)
}

/// Proportions used for deployment `index` under `policy`.
pub fn mix_for(policy: MixPolicy, base: [f64; 3], seed: u64, index: usize) -> [f64; 3] {
    match policy {
        MixPolicy::Fixed => base,
        MixPolicy::Varied if index % 2 == 0 => sweep_mix(SWEEP_FRACTIONS[(index / 2) % SWEEP_FRACTIONS.len()]),
        MixPolicy::Varied => uniform_simplex(&mut rng::stream(rng::child_seed(seed, index as u64), streams::GEOMETRY + 100)),
    }
}

/// Builds `spec.samples` frames; deployment `j` is seeded by `child_seed(spec.seed, j)`.
pub fn generate_dataset(base: &ScenarioConfig, spec: &DatasetSpec) -> Result<Dataset> {
    let per = spec.frames_per_deployment.max(1);
    let n_dep = spec.samples.div_ceil(per);
    let built: Vec<(Deployment, Vec<Frame>)> = (0..n_dep)
        .into_par_iter()
        .map(|j| {
            let seed = rng::child_seed(spec.seed, j as u64);
            let cfg = base.clone().with_seed(seed).with_proportions(mix_for(spec.mix, base.group_proportions, spec.seed, j));
            let dep = Deployment::new(&cfg)?;
            let count = per.min(spec.samples - j * per);
            let frames = (0..count).map(|f| dep.draw_frame(&mut rng::trial(seed, f as u64))).collect::<Result<Vec<_>>>()?;
            Ok((dep, frames))
        })
        .collect::<Result<_>>()?;
    let mut deployments = Vec::with_capacity(n_dep);
    let mut frames = Vec::with_capacity(spec.samples);
    for (j, (dep, fs)) in built.into_iter().enumerate() {
        deployments.push(dep);
        frames.extend(fs.into_iter().map(|f| (j, f)));
    }
    Ok(Dataset { deployments, frames })
}

/// Index of the largest share, ties to the lowest index; `None` if the top share is tied.
pub fn dominant_group(proportions: [f64; 3]) -> Option<DeviceGroup> {
    let mut best = 0;
    for i in 1..3 {
        if proportions[i] > proportions[best] {
            best = i;
        }
    }
    let tied = (0..3).any(|i| i != best && proportions[i] == proportions[best]);
    if tied {
        None
    } else {
        DeviceGroup::from_index(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_noise_normalized() {
        let mut cfg = ScenarioConfig::desk_scale().with_seed(3);
        cfg.activity_prob = 0.0;
        let dep = Deployment::new(&cfg).unwrap();
        assert_eq!(dep.model(ExpertKind::Expert3).noise_power, 1.0);
        let mut rng = rng::trial(3, 0);
        let mut acc = 0.0;
        let mut n = 0;
        for _ in 0..500 {
            let f = dep.draw_frame(&mut rng).unwrap();
            assert!(f.a.iter().all(|&a| a == 0.0));
            acc += f.y.norm_squared();
            n += f.y.len();
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn dataset_is_reproducible_and_sized() {
        let spec = DatasetSpec { samples: 25, frames_per_deployment: 10, mix: MixPolicy::Varied, seed: 9 };
        let cfg = ScenarioConfig::desk_scale();
        let a = generate_dataset(&cfg, &spec).unwrap();
        let b = generate_dataset(&cfg, &spec).unwrap();
        assert_eq!(a.len(), 25);
        assert_eq!(a.deployments.len(), 3);
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.y, y.1.y);
        }
        assert_eq!(a.deployments[0].proportions(), [0.0, 0.5, 0.5]);
    }

    #[test]
    fn sweep_endpoint_split() {
        let cfg = ScenarioConfig::default().with_proportions(sweep_mix(0.8));
        let dep = Deployment::new(&cfg).unwrap();
        assert_eq!(dep.scenario.group_counts(), [80, 10, 10]);
    }

    #[test]
    fn dominant_group_ignores_ties() {
        assert_eq!(dominant_group([0.6, 0.2, 0.2]), Some(DeviceGroup::Irs));
        assert_eq!(dominant_group([0.2, 0.2, 0.6]), Some(DeviceGroup::Rayleigh));
        assert_eq!(dominant_group([0.0, 0.5, 0.5]), None);
    }

    #[test]
    fn varied_mixes_are_on_the_simplex() {
        for i in 0..20 {
            let p = mix_for(MixPolicy::Varied, [0.4, 0.3, 0.3], 5, i);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
