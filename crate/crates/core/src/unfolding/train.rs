use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{batch_loss, param_gradients, Example, LossKind, UnfoldedLayer, UnfoldedParams};
use crate::covstats::ExpertKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moe::GateParams;
use crate::optim::Adam;
use crate::rng::{self, streams};

/// Which covariance model each frame is unfolded under.
#[derive(Clone, Debug)]
pub enum ExpertSource {
    Fixed(ExpertKind),
    /// Top-1 choice of a trained gate, once per frame.
    Gate(Box<GateParams>),
}

impl ExpertSource {
    pub fn expert_for(&self, y: &crate::linalg::CMat) -> ExpertKind {
        match self {
            ExpertSource::Fixed(k) => *k,
            ExpertSource::Gate(g) => g.select(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Frames used; the dataset is truncated to this many.
    pub dataset_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs_per_stage: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { dataset_size: 2000, batch_size: 50, learning_rate: 1e-2, epochs_per_stage: 6, loss: LossKind::Mse, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 || self.batch_size == 0 || self.epochs_per_stage == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("training sizes, epochs and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Training-set loss of the stage-1 initialization.
    pub initial_loss: f64,
    /// Training-set loss after each epoch of each stage, in order.
    pub trace: Vec<f64>,
    /// Training-set loss of the network kept at the end of each stage.
    pub stage_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.stage_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Per-parameter learning-rate multipliers: `A` entries relative to the
/// initial diagonal, `B` likewise, `nu` unscaled.
fn lr_scales(params: &UnfoldedParams, noise_power: f64) -> Vec<f64> {
    let l = params.signature_len();
    let n = l * l;
    let a_scale = 1.0 / (noise_power * noise_power);
    let b_scale = 1.0 / noise_power;
    let mut per_layer = Vec::with_capacity(UnfoldedParams::per_layer(l));
    per_layer.extend(std::iter::repeat_n(a_scale, 2 * n));
    per_layer.extend(std::iter::repeat_n(b_scale, 2 * n));
    per_layer.push(1.0);
    per_layer.repeat(params.depth())
}

/// Incremental training: stage `i` trains layers `1..=i` jointly, layer `i`
/// starting from layer `i-1`'s values. If the copy makes the network worse,
/// its step is halved until it does not.
///
/// Each stage keeps the best network seen at its epoch ends; appending a layer
/// with a vanishing step (an identity layer) is always a candidate, so stage
/// losses never increase.
pub fn train_unfolded(
    dataset: &Dataset,
    depth: usize,
    cfg: &TrainConfig,
    source: &ExpertSource,
) -> Result<(UnfoldedParams, TrainReport)> {
    cfg.validate()?;
    if depth == 0 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    let n = cfg.dataset_size.min(dataset.len());
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let experts: Vec<ExpertKind> = dataset.frames[..n].par_iter().map(|(_, f)| source.expert_for(&f.y)).collect();
    let examples: Vec<Example> = dataset.frames[..n]
        .iter()
        .zip(&experts)
        .map(|((d, f), &kind)| {
            let dep = &dataset.deployments[*d];
            Example { y: &f.y, target: &f.a, model: dep.model(kind), scale: dep.loss_scale }
        })
        .collect();
    let noise = examples[0].model.noise_power;
    let l = examples[0].model.signature_len();

    let mut best = UnfoldedParams::initial(1, l, noise);
    let initial_loss = batch_loss(&examples, &best, cfg.loss)?;
    check_finite(initial_loss, 1, "initial loss")?;
    let mut best_loss = initial_loss;
    let mut trace = Vec::new();
    let mut stage_losses = Vec::with_capacity(depth);
    let mut order: Vec<usize> = (0..n).collect();

    for stage in 1..=depth {
        let mut params = best.clone();
        if stage > 1 {
            let last = best.layers.last().expect("non-empty").clone();
            let mut identity = best.clone();
            identity.layers.push(UnfoldedLayer { nu: IDENTITY_NU, ..last.clone() });
            best_loss = batch_loss(&examples, &identity, cfg.loss)?;
            params = extend_by_copy(&best, last, best_loss, &examples, cfg.loss)?;
            best = identity;
        }
        let mut flat = params.to_flat();
        let scales = lr_scales(&params, noise);
        let mut opt = Adam::new(flat.len(), cfg.learning_rate);
        let mut shuffle = rng::stream(rng::child_seed(cfg.seed, stage as u64), streams::SHUFFLE);
        for _ in 0..cfg.epochs_per_stage {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
                let (value, grad) = param_gradients(&batch, &params, cfg.loss)?;
                let g = grad.to_flat();
                if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { stage, detail: format!("batch loss {value}") });
                }
                opt.step(&mut flat, &g, &scales);
                params.set_flat(&flat);
            }
            let epoch_loss = batch_loss(&examples, &params, cfg.loss)?;
            check_finite(epoch_loss, stage, "epoch loss")?;
            trace.push(epoch_loss);
            if epoch_loss < best_loss {
                best_loss = epoch_loss;
                best = params.clone();
            }
        }
        stage_losses.push(best_loss);
    }
    Ok((best, TrainReport { initial_loss, trace, stage_losses }))
}

/// Log-step of a layer that leaves its input unchanged to within rounding.
const IDENTITY_NU: f64 = -50.0;
const MAX_STEP_HALVINGS: usize = 60;

/// `base` plus a copy of `layer`, with the copy's step halved until the
/// extended network is no worse than `reference`.
fn extend_by_copy(
    base: &UnfoldedParams,
    mut layer: UnfoldedLayer,
    reference: f64,
    examples: &[Example],
    loss: LossKind,
) -> Result<UnfoldedParams> {
    let mut params = base.clone();
    params.layers.push(layer.clone());
    for _ in 0..MAX_STEP_HALVINGS {
        let value = batch_loss(examples, &params, loss)?;
        if value.is_finite() && value <= reference {
            break;
        }
        layer.nu -= std::f64::consts::LN_2;
        *params.layers.last_mut().expect("non-empty") = layer.clone();
    }
    Ok(params)
}

fn check_finite(value: f64, stage: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { stage, detail: format!("{what} is {value}") })
    }
}
