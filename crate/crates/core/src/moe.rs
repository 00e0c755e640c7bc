//! Gating network: estimates the device-group proportions from a received
//! frame and routes the frame to one expert covariance model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::covstats::ExpertKind;
use crate::data::{dominant_group, Dataset};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::optim::Adam;
use crate::rng::{self, streams};
use crate::scenario::DeviceGroup;

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 128;
pub const GROUPS: usize = 3;

/// Probabilities are clamped here before taking logs.
const KL_FLOOR: f64 = 1e-12;

/// Weights of the three fully connected layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    /// 512 x 2LM.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// 128 x 512.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    /// 3 x 128.
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
    pub signature_len: usize,
    pub antennas: usize,
    /// Noise power assumed by the input normalization.
    pub noise_power: f64,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    // row-major draw order
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.random_range(-limit..=limit);
        }
    }
    m
}

impl GateParams {
    pub fn zeros(l: usize, m: usize, noise_power: f64) -> Self {
        let n_in = 2 * l * m;
        Self {
            w1: DMatrix::zeros(HIDDEN1, n_in),
            b1: DVector::zeros(HIDDEN1),
            w2: DMatrix::zeros(HIDDEN2, HIDDEN1),
            b2: DVector::zeros(HIDDEN2),
            w3: DMatrix::zeros(GROUPS, HIDDEN2),
            b3: DVector::zeros(GROUPS),
            signature_len: l,
            antennas: m,
            noise_power,
        }
    }

    /// Uniform `+-sqrt(6/(fan_in+fan_out))` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(l: usize, m: usize, noise_power: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(l, m, noise_power);
        p.w1 = glorot(HIDDEN1, 2 * l * m, rng);
        p.w2 = glorot(HIDDEN2, HIDDEN1, rng);
        p.w3 = glorot(GROUPS, HIDDEN2, rng);
        p
    }

    pub fn input_len(&self) -> usize {
        2 * self.signature_len * self.antennas
    }

    pub fn validate(&self) -> Result<()> {
        let n_in = self.input_len();
        let shapes = [
            (self.w1.shape(), (HIDDEN1, n_in)),
            (self.w2.shape(), (HIDDEN2, HIDDEN1)),
            (self.w3.shape(), (GROUPS, HIDDEN2)),
            ((self.b1.len(), 1), (HIDDEN1, 1)),
            ((self.b2.len(), 1), (HIDDEN2, 1)),
            ((self.b3.len(), 1), (GROUPS, 1)),
        ];
        if shapes.iter().any(|(got, want)| got != want) {
            return Err(Error::Dimension(format!("gate layers do not match L={}, M={}", self.signature_len, self.antennas)));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::Config("gate noise power must be positive".into()));
        }
        Ok(())
    }

    /// Scale applied to the preprocessed frame: `1/sqrt(sigma^2 2LM)`.
    pub fn input_scale(&self) -> f64 {
        1.0 / (self.noise_power * self.input_len() as f64).sqrt()
    }

    /// Normalized network input for a frame.
    pub fn input(&self, y: &CMat) -> DVector<f64> {
        preprocess(y) * self.input_scale()
    }

    pub fn proportions(&self, y: &CMat) -> [f64; 3] {
        gate_forward(&self.input(y), self)
    }

    pub fn select(&self, y: &CMat) -> ExpertKind {
        select_expert(self.proportions(y))
    }

    pub fn num_params(&self) -> usize {
        self.to_flat().len()
    }

    /// `w1, b1, w2, b2, w3, b3`, each matrix row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in [(&self.w1, &self.b1), (&self.w2, &self.b2), (&self.w3, &self.b3)] {
            out.extend(w.transpose().iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for (w, b) in [(&mut self.w1, &mut self.b1), (&mut self.w2, &mut self.b2), (&mut self.w3, &mut self.b3)] {
            let (r, c) = w.shape();
            *w = DMatrix::from_row_slice(r, c, &flat[pos..pos + r * c]);
            pos += r * c;
            b.copy_from_slice(&flat[pos..pos + r]);
            pos += r;
        }
    }
}

/// `[Re vec(Y); Im vec(Y)]`, column-major.
pub fn preprocess(y: &CMat) -> DVector<f64> {
    let n = y.len();
    DVector::from_fn(2 * n, |i, _| if i < n { y.as_slice()[i].re } else { y.as_slice()[i - n].im })
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

struct Activations {
    a1: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    p: DMatrix<f64>,
}

/// Column-batched forward pass; `x` is `2LM x B`.
fn forward_batch(x: &DMatrix<f64>, params: &GateParams) -> Activations {
    let mut a1 = &params.w1 * x;
    for mut col in a1.column_iter_mut() {
        col += &params.b1;
    }
    let h1 = a1.map(|v| v.max(0.0));
    let mut h2 = &params.w2 * &h1;
    for mut col in h2.column_iter_mut() {
        col += &params.b2;
        col.apply(|v| *v = v.tanh());
    }
    let mut p = &params.w3 * &h2;
    for mut col in p.column_iter_mut() {
        col += &params.b3;
        softmax_in_place(col.as_mut_slice());
    }
    Activations { a1, h1, h2, p }
}

/// `softmax(W3 tanh(W2 relu(W1 x + b1) + b2) + b3)`.
pub fn gate_forward(x: &DVector<f64>, params: &GateParams) -> [f64; 3] {
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let p = forward_batch(&xm, params).p;
    [p[(0, 0)], p[(1, 0)], p[(2, 0)]]
}

/// `rho_i = |K_i| / K`.
pub fn true_proportions(groups: &[DeviceGroup]) -> Result<[f64; 3]> {
    if groups.is_empty() {
        return Err(Error::Domain("proportions of an empty device set".into()));
    }
    let mut counts = [0usize; 3];
    for g in groups {
        counts[g.index()] += 1;
    }
    Ok(counts.map(|c| c as f64 / groups.len() as f64))
}

/// `sum_i t_i log(t_i / max(rho_i, 1e-12))` with `0 log 0 = 0`.
pub fn kl_loss(rho: [f64; 3], rho_true: [f64; 3]) -> f64 {
    rho_true
        .iter()
        .zip(&rho)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, r)| t * (t / r.max(KL_FLOOR)).ln())
        .sum()
}

/// Argmax with ties to the lowest index.
pub fn select_expert(rho: [f64; 3]) -> ExpertKind {
    let mut best = 0;
    for i in 1..3 {
        if rho[i] > rho[best] {
            best = i;
        }
    }
    ExpertKind::EXPERTS[best]
}

/// Mean KL over a batch and, if requested, the gradient in [`GateParams::to_flat`] layout.
fn batch_loss_grad(x: &DMatrix<f64>, targets: &DMatrix<f64>, params: &GateParams, want_grad: bool) -> (f64, Option<GateParams>) {
    let act = forward_batch(x, params);
    let bsz = x.ncols();
    let inv = 1.0 / bsz as f64;
    let mut value = 0.0;
    let mut dz = DMatrix::zeros(GROUPS, bsz);
    for c in 0..bsz {
        let rho = [act.p[(0, c)], act.p[(1, c)], act.p[(2, c)]];
        let t = [targets[(0, c)], targets[(1, c)], targets[(2, c)]];
        value += kl_loss(rho, t) * inv;
        // d/d rho_i of -t_i log max(rho_i, floor), then through the softmax
        let g: [f64; 3] = std::array::from_fn(|i| if t[i] > 0.0 && rho[i] > KL_FLOOR { -t[i] / rho[i] } else { 0.0 });
        let dot: f64 = (0..3).map(|i| rho[i] * g[i]).sum();
        for i in 0..3 {
            dz[(i, c)] = rho[i] * (g[i] - dot) * inv;
        }
    }
    if !want_grad {
        return (value, None);
    }
    let mut grad = GateParams::zeros(params.signature_len, params.antennas, params.noise_power);
    grad.w3 = &dz * act.h2.transpose();
    grad.b3 = dz.column_sum();
    let mut d2 = params.w3.transpose() * &dz;
    d2.zip_apply(&act.h2, |g, h| *g *= 1.0 - h * h);
    grad.w2 = &d2 * act.h1.transpose();
    grad.b2 = d2.column_sum();
    let mut d1 = params.w2.transpose() * &d2;
    d1.zip_apply(&act.a1, |g, a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
    grad.w1 = &d1 * x.transpose();
    grad.b1 = d1.column_sum();
    (value, Some(grad))
}

/// Mean KL loss of `params` on `(x_i, t_i)` pairs and its exact gradient.
pub fn gate_loss_and_gradient(inputs: &[DVector<f64>], targets: &[[f64; 3]], params: &GateParams) -> (f64, GateParams) {
    let (x, t) = stack(inputs, targets);
    let (v, g) = batch_loss_grad(&x, &t, params, true);
    (v, g.expect("gradient requested"))
}

fn stack(inputs: &[DVector<f64>], targets: &[[f64; 3]]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_in = inputs.first().map_or(0, |x| x.len());
    let x = DMatrix::from_fn(n_in, inputs.len(), |i, j| inputs[j][i]);
    let t = DMatrix::from_fn(GROUPS, targets.len(), |i, j| targets[j][i]);
    (x, t)
}

#[derive(Clone, Debug)]
pub struct GateTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, learning_rate: 1e-3, epochs: 30, seed: 0 }
    }
}

impl GateTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("gate training needs positive batch size, epochs and learning rate".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GateReport {
    /// Mean KL over the training set before training, then after each epoch.
    pub trace: Vec<f64>,
}

impl GateReport {
    pub fn initial(&self) -> f64 {
        self.trace[0]
    }

    pub fn last(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial loss")
    }
}

/// Gate inputs and proportion labels for every frame of a dataset.
pub fn gate_examples(dataset: &Dataset, params: &GateParams) -> (Vec<DVector<f64>>, Vec<[f64; 3]>) {
    let xs = dataset.frames.iter().map(|(_, f)| params.input(&f.y)).collect();
    let ts = dataset.frames.iter().map(|(d, _)| dataset.deployments[*d].proportions()).collect();
    (xs, ts)
}

/// Minimizes the mean KL loss with Adam over shuffled minibatches.
pub fn train_gate(dataset: &Dataset, cfg: &GateTrainConfig) -> Result<(GateParams, GateReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("gate training set is empty".into()));
    }
    let first = dataset.deployment_of(0);
    let (l, m) = (first.config().signature_len, first.config().antennas);
    let noise = first.model(ExpertKind::Expert1).noise_power;
    let mut params = GateParams::init(l, m, noise, &mut rng::stream(cfg.seed, streams::INIT));
    let (xs, ts) = gate_examples(dataset, &params);
    let (x_all, t_all) = stack(&xs, &ts);

    let mut trace = vec![batch_loss_grad(&x_all, &t_all, &params, false).0];
    let mut flat = params.to_flat();
    let mut opt = Adam::new(flat.len(), cfg.learning_rate);
    let ones = vec![1.0; flat.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<DVector<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let bt: Vec<[f64; 3]> = chunk.iter().map(|&i| ts[i]).collect();
            let (v, g) = gate_loss_and_gradient(&bx, &bt, &params);
            let gflat = g.to_flat();
            if !v.is_finite() || gflat.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    stage: epoch + 1,
                    detail: format!("gate loss became non-finite; trace so far {trace:?}"),
                });
            }
            opt.step(&mut flat, &gflat, &ones);
            params.set_flat(&flat);
        }
        trace.push(batch_loss_grad(&x_all, &t_all, &params, false).0);
    }
    Ok((params, GateReport { trace }))
}

/// Top-1 accuracy over frames whose deployment has a strict dominant group
/// holding at least `min_share` of the devices: `(correct, counted)`.
pub fn gate_accuracy(params: &GateParams, dataset: &Dataset, min_share: f64) -> (usize, usize) {
    let mut correct = 0;
    let mut counted = 0;
    for (d, f) in &dataset.frames {
        let rho = dataset.deployments[*d].proportions();
        let Some(dom) = dominant_group(rho) else { continue };
        if rho[dom.index()] < min_share {
            continue;
        }
        counted += 1;
        if params.select(&f.y) == ExpertKind::for_group(dom) {
            correct += 1;
        }
    }
    (correct, counted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn preprocess_layout() {
        let y = CMat::from_fn(2, 3, |i, j| Complex64::new((i + 10 * j) as f64, -((i + 10 * j) as f64)));
        let x = preprocess(&y);
        assert_eq!(x.len(), 12);
        assert_eq!(x.as_slice()[..6], [0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        assert_eq!(x.as_slice()[6..], [-0.0, -1.0, -10.0, -11.0, -20.0, -21.0]);
        assert!(preprocess(&CMat::zeros(4, 2)).iter().all(|&v| v == 0.0));
        assert_eq!(preprocess(&CMat::zeros(20, 32)).len(), 1280);
        let imag = CMat::from_element(3, 2, Complex64::new(0.0, 2.0));
        assert!(preprocess(&imag).as_slice()[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_is_uniform_and_bias_dominates() {
        let mut p = GateParams::zeros(2, 2, 1.0);
        let x = DVector::from_element(8, 3.0);
        let rho = gate_forward(&x, &p);
        assert!(rho.iter().all(|r| (r - 1.0 / 3.0).abs() < 1e-15));
        p.b3[0] = 10.0;
        assert!(gate_forward(&x, &p)[0] > 0.99);
    }

    #[test]
    fn true_proportion_examples() {
        use DeviceGroup::*;
        let mut g = vec![Irs; 40];
        g.extend(vec![Rician; 30]);
        g.extend(vec![Rayleigh; 30]);
        assert_eq!(true_proportions(&g).unwrap(), [0.4, 0.3, 0.3]);
        assert_eq!(true_proportions(&[Rician; 5]).unwrap(), [0.0, 1.0, 0.0]);
        let even: Vec<_> = (0..24).map(|i| DeviceGroup::ALL[i % 3]).collect();
        let p = true_proportions(&even).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(true_proportions(&[]).is_err());
    }

    #[test]
    fn kl_examples() {
        let t = [0.4, 0.3, 0.3];
        assert_eq!(kl_loss(t, t), 0.0);
        let third = 1.0 / 3.0;
        assert!((kl_loss([third; 3], [1.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-12);
        let want = 0.4 * 0.8f64.ln() + 0.3 * 1.2f64.ln() + 0.3 * 1.2f64.ln();
        assert!((kl_loss([0.5, 0.25, 0.25], t) - want).abs() < 1e-12);
        // zero prediction where the target is positive stays finite
        assert!(kl_loss([0.0, 0.5, 0.5], t).is_finite());
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_expert([0.5, 0.3, 0.2]), ExpertKind::Expert1);
        let third = 1.0 / 3.0;
        assert_eq!(select_expert([third; 3]), ExpertKind::Expert1);
        assert_eq!(select_expert([0.1, 0.2, 0.7]), ExpertKind::Expert3);
        assert_eq!(select_expert([0.1, 0.45, 0.45]), ExpertKind::Expert2);
    }

    #[test]
    fn init_is_bounded_with_zero_bias() {
        let p = GateParams::init(4, 2, 1.0, &mut SimRng::seed_from_u64(1));
        p.validate().unwrap();
        let lim = (6.0f64 / (512.0 + 16.0)).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= lim));
        assert!(p.w1.iter().any(|v| v.abs() > 0.5 * lim));
        assert!(p.b1.iter().chain(p.b2.iter()).chain(p.b3.iter()).all(|&v| v == 0.0));
        let mut q = p.clone();
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    fn finite_difference_check(seed: u64) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut params = GateParams::init(2, 2, 1.0, &mut rng);
        // non-zero biases so every path is exercised
        for b in params.b1.iter_mut().chain(params.b2.iter_mut()).chain(params.b3.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let xs: Vec<DVector<f64>> = (0..5).map(|_| DVector::from_fn(8, |_, _| rng.random_range(-2.0..2.0))).collect();
        let ts: Vec<[f64; 3]> = (0..5)
            .map(|i| match i % 3 {
                0 => [0.5, 0.25, 0.25],
                1 => [0.0, 0.4, 0.6],
                _ => [1.0, 0.0, 0.0],
            })
            .collect();
        let (_, g) = gate_loss_and_gradient(&xs, &ts, &params);
        let gflat = g.to_flat();
        let base = params.to_flat();
        let scale = gflat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        let mut worst = 0.0f64;
        // every output-layer entry plus a random sample of the hidden layers
        let n = base.len();
        let tail = 3 * HIDDEN2 + 3;
        let mut picks: Vec<usize> = (n - tail..n).collect();
        picks.extend((0..400).map(|_| rng.random_range(0..n - tail)));
        for i in picks {
            let mut p = params.clone();
            let mut f = base.clone();
            f[i] += h;
            p.set_flat(&f);
            let up = gate_loss_and_gradient(&xs, &ts, &p).0;
            f[i] -= 2.0 * h;
            p.set_flat(&f);
            let down = gate_loss_and_gradient(&xs, &ts, &p).0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - gflat[i]).abs() / fd.abs().max(gflat[i].abs()).max(1e-3 * scale);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            finite_difference_check(seed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_is_a_distribution(seed in 0u64..1000, scale in -50.0f64..50.0) {
            let mut rng = SimRng::seed_from_u64(seed);
            let p = GateParams::init(2, 2, 1.0, &mut rng);
            let x = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0) * scale);
            let rho = gate_forward(&x, &p);
            prop_assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(rho.iter().all(|&r| r >= 0.0));
        }

        #[test]
        fn selection_ignores_logit_scaling(z in proptest::array::uniform3(-5.0f64..5.0), c in 0.1f64..10.0) {
            let soft = |v: [f64; 3]| { let mut v = v; softmax_in_place(&mut v); v };
            prop_assert_eq!(select_expert(soft(z)), select_expert(soft(z.map(|v| v * c))));
        }

        #[test]
        fn kl_nonnegative(a in proptest::array::uniform3(0.01f64..1.0), b in proptest::array::uniform3(0.0f64..1.0)) {
            let n = |v: [f64; 3]| { let s: f64 = v.iter().sum(); v.map(|x| x / s) };
            let b = if b.iter().sum::<f64>() == 0.0 { [1.0, 0.0, 0.0] } else { n(b) };
            prop_assert!(kl_loss(n(a), b) >= -1e-15);
        }
    }
}
