//! Deep-unfolded projected gradient descent.
//!
//! Layer `i` takes a PGD step in which every `Sigma_m^{-1}` is replaced by the
//! surrogate `A Sigma_m + B`, with `Sigma_m` built from the previous layer's
//! estimate. `A`, `B` and the step `eta = exp(nu)` are trainable and shared
//! across antennas and devices.

mod train;

pub use train::{train_unfolded, ExpertSource, TrainConfig, TrainReport};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covstats::ModelContext;
use crate::error::{Error, Result};
use crate::linalg::{scaled_identity, CMat, CVec};

/// Trainable parameters of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedLayer {
    pub a_mat: CMat,
    pub b_mat: CMat,
    /// Log step size.
    pub nu: f64,
}

impl UnfoldedLayer {
    /// `A = I / sigma^4`, `B = 0`, `eta = 1e-2`: at zero activity `A Sigma = Sigma^{-1}`.
    pub fn initial(l: usize, noise_power: f64) -> Self {
        Self {
            a_mat: scaled_identity(l, 1.0 / (noise_power * noise_power)),
            b_mat: CMat::zeros(l, l),
            nu: 1e-2f64.ln(),
        }
    }

    pub fn eta(&self) -> f64 {
        self.nu.exp()
    }

    fn zeros(l: usize) -> Self {
        Self { a_mat: CMat::zeros(l, l), b_mat: CMat::zeros(l, l), nu: 0.0 }
    }
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean over devices of the squared error, divided by the deployment's `loss_scale^2`.
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        (s == "mse").then_some(LossKind::Mse)
    }

    /// Loss of one sample and its gradient with respect to `a_hat`.
    pub fn eval(self, a_hat: &[f64], target: &[f64], scale: f64) -> (f64, Vec<f64>) {
        let k = a_hat.len() as f64;
        let inv = 1.0 / (scale * scale);
        let mut value = 0.0;
        let grad = a_hat
            .iter()
            .zip(target)
            .map(|(x, t)| {
                let e = x - t;
                value += e * e * inv / k;
                2.0 * e * inv / k
            })
            .collect();
        (value, grad)
    }
}

/// The stack of layers; `layers.len()` is the depth `I`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedParams {
    pub layers: Vec<UnfoldedLayer>,
}

impl UnfoldedParams {
    pub fn new(layers: Vec<UnfoldedLayer>) -> Result<Self> {
        let p = Self { layers };
        p.validate()?;
        Ok(p)
    }

    /// `depth` copies of [`UnfoldedLayer::initial`].
    pub fn initial(depth: usize, l: usize, noise_power: f64) -> Self {
        Self { layers: vec![UnfoldedLayer::initial(l, noise_power); depth] }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn signature_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.a_mat.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("an unfolded network needs at least one layer".into()));
        }
        let l = self.signature_len();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.a_mat.shape() != (l, l) || layer.b_mat.shape() != (l, l) {
                return Err(Error::Dimension(format!("layer {i} matrices are not {l}x{l}")));
            }
            let finite = layer.a_mat.iter().chain(layer.b_mat.iter()).all(|z| z.re.is_finite() && z.im.is_finite());
            if !finite || !layer.nu.is_finite() {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Same shape, all zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self { layers: vec![UnfoldedLayer::zeros(self.signature_len()); self.depth()] }
    }

    /// Real parameters per layer: re/im of `A`, re/im of `B`, then `nu`.
    pub fn per_layer(l: usize) -> usize {
        4 * l * l + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depth() * Self::per_layer(self.signature_len()));
        for layer in &self.layers {
            for m in [&layer.a_mat, &layer.b_mat] {
                out.extend(m.iter().map(|z| z.re));
                out.extend(m.iter().map(|z| z.im));
            }
            out.push(layer.nu);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let l = self.signature_len();
        let n = l * l;
        let mut chunks = flat.chunks(Self::per_layer(l));
        for layer in &mut self.layers {
            let c = chunks.next().expect("flat parameter vector too short");
            for (j, m) in [&mut layer.a_mat, &mut layer.b_mat].into_iter().enumerate() {
                let off = 2 * n * j;
                for (i, z) in m.iter_mut().enumerate() {
                    *z = Complex64::new(c[off + i], c[off + n + i]);
                }
            }
            layer.nu = c[4 * n];
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (x, y) in self.layers.iter_mut().zip(&other.layers) {
            x.a_mat += &y.a_mat;
            x.b_mat += &y.b_mat;
            x.nu += y.nu;
        }
    }

    fn scale(&mut self, c: f64) {
        let cz = Complex64::new(c, 0.0);
        for x in &mut self.layers {
            x.a_mat *= cz;
            x.b_mat *= cz;
            x.nu *= c;
        }
    }
}

struct AntennaTape {
    sigma: CMat,
    mt: CMat,
    /// `M~ S`.
    x: CMat,
    r: CVec,
    v: Vec<Complex64>,
    t: Vec<Complex64>,
}

struct LayerTape {
    d: Vec<f64>,
    z: Vec<f64>,
    antennas: Vec<AntennaTape>,
}

fn covariance(model: &ModelContext, m: usize, a: &[f64]) -> CMat {
    let w = model.weights();
    let s = &model.s;
    let (l, k) = s.shape();
    let mut sigma = scaled_identity(l, model.noise_power);
    for kk in 0..k {
        let c = a[kk] * w[(m, kk)];
        if c == 0.0 {
            continue;
        }
        let col = s.column(kk);
        for j in 0..l {
            let sj = col[j].conj() * c;
            for i in 0..l {
                sigma[(i, j)] += col[i] * sj;
            }
        }
    }
    sigma
}

fn residual(model: &ModelContext, m: usize, y: &CMat, a: &[f64]) -> CVec {
    let e = model.mean_coefs();
    let mut r: CVec = y.column(m).into_owned();
    for (kk, &ak) in a.iter().enumerate() {
        if ak != 0.0 {
            r.axpy(-e[(m, kk)] * ak, &model.s.column(kk), Complex64::new(1.0, 0.0));
        }
    }
    r
}

fn layer_forward(y: &CMat, a: &[f64], layer: &UnfoldedLayer, model: &ModelContext, keep: bool) -> (Vec<f64>, Option<LayerTape>) {
    let k = model.devices();
    let w = model.weights();
    let e = model.mean_coefs();
    let s = &model.s;
    let mut d = vec![0.0; k];
    let mut antennas = Vec::with_capacity(if keep { model.antennas() } else { 0 });
    for m in 0..model.antennas() {
        let sigma = covariance(model, m, a);
        let mt = &layer.a_mat * &sigma + &layer.b_mat;
        let x = &mt * s;
        let r = residual(model, m, y, a);
        let p = &mt * &r;
        let v: Vec<Complex64> = s.ad_mul(&p).iter().copied().collect();
        let t: Vec<Complex64> = x.ad_mul(&r).iter().map(|z| z.conj()).collect();
        for kk in 0..k {
            let u = s.column(kk).dotc(&x.column(kk));
            let (wk, ek) = (w[(m, kk)], e[(m, kk)]);
            d[kk] += (u * wk - v[kk] * t[kk] * wk - ek * t[kk] - ek.conj() * v[kk]).re;
        }
        if keep {
            antennas.push(AntennaTape { sigma, mt, x, r, v, t });
        }
    }
    let eta = layer.eta();
    let z: Vec<f64> = a.iter().zip(&d).map(|(ai, di)| ai - eta * di).collect();
    let next = z.iter().map(|&v| v.max(0.0)).collect();
    (next, keep.then_some(LayerTape { d, z, antennas }))
}

/// One layer: `max(a_prev - eta d, 0)` with `d` the PGD gradient under the surrogate inverse.
///
/// The expert in force is the one `model` was configured with.
pub fn unfolded_layer(y: &CMat, a_prev: &[f64], layer: &UnfoldedLayer, model: &ModelContext) -> Result<Vec<f64>> {
    model.check_inputs(y, a_prev)?;
    if layer.a_mat.nrows() != model.signature_len() {
        return Err(Error::Dimension("layer size does not match the signature length".into()));
    }
    Ok(layer_forward(y, a_prev, layer, model, false).0)
}

/// Runs all layers from `a = 0`.
pub fn unfolded_forward(y: &CMat, params: &UnfoldedParams, model: &ModelContext) -> Result<Vec<f64>> {
    let mut a = vec![0.0; model.devices()];
    for layer in &params.layers {
        a = unfolded_layer(y, &a, layer, model)?;
    }
    Ok(a)
}

/// Backpropagates `g_next = dL/da_next` through one layer, accumulating parameter
/// gradients into `grad` and returning `dL/da_prev`.
fn layer_backward(
    a_prev: &[f64],
    layer: &UnfoldedLayer,
    model: &ModelContext,
    tape: &LayerTape,
    g_next: &[f64],
    grad: &mut UnfoldedLayer,
) -> Vec<f64> {
    let k = model.devices();
    let w = model.weights();
    let e = model.mean_coefs();
    let s = &model.s;
    let eta = layer.eta();

    let g_z: Vec<f64> = g_next.iter().zip(&tape.z).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
    grad.nu += -eta * g_z.iter().zip(&tape.d).map(|(g, d)| g * d).sum::<f64>();
    let delta: Vec<f64> = g_z.iter().map(|g| -eta * g).collect();
    let mut g_a = g_z.clone();
    debug_assert_eq!(a_prev.len(), k);

    let a_adj = layer.a_mat.adjoint();
    for (m, at) in tape.antennas.iter().enumerate() {
        let mut h1 = CVec::zeros(s.nrows());
        let mut h2 = CVec::zeros(s.nrows());
        let mut p2 = CVec::zeros(k);
        let mut sd = s.clone();
        for kk in 0..k {
            let (wk, ek) = (w[(m, kk)], e[(m, kk)]);
            let p1 = -(at.t[kk] * wk + ek.conj()) * delta[kk];
            p2[kk] = -(at.v[kk] * wk + ek) * delta[kk];
            h1.axpy(p1.conj(), &s.column(kk), Complex64::new(1.0, 0.0));
            h2.axpy(p2[kk], &s.column(kk), Complex64::new(1.0, 0.0));
            sd.column_mut(kk).scale_mut(delta[kk] * wk);
        }
        let mut g_mt = sd * s.adjoint();
        g_mt += &h1 * at.r.adjoint();
        g_mt += &at.r * h2.adjoint();
        let g_r = at.mt.ad_mul(&h1) + &at.x * &p2;

        grad.a_mat += &g_mt * &at.sigma;
        grad.b_mat += &g_mt;
        let g_sigma = &a_adj * &g_mt;
        let q = &g_sigma * s;
        for kk in 0..k {
            let sk = s.column(kk);
            let quad = sk.dotc(&q.column(kk)).re;
            let lin = (e[(m, kk)] * g_r.dotc(&sk)).re;
            g_a[kk] += w[(m, kk)] * quad - lin;
        }
    }
    g_a
}

/// One training sample.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub y: &'a CMat,
    pub target: &'a [f64],
    pub model: &'a ModelContext,
    /// Errors are divided by this before squaring.
    pub scale: f64,
}

/// Loss of one sample and, when `grad` is given, its parameter gradient added in.
pub fn sample_loss(ex: &Example, params: &UnfoldedParams, loss: LossKind, grad: Option<&mut UnfoldedParams>) -> Result<f64> {
    ex.model.check_inputs(ex.y, ex.target)?;
    let keep = grad.is_some();
    let mut inputs = Vec::with_capacity(params.depth());
    let mut tapes = Vec::with_capacity(params.depth());
    let mut a = vec![0.0; ex.model.devices()];
    for layer in &params.layers {
        let (next, tape) = layer_forward(ex.y, &a, layer, ex.model, keep);
        inputs.push(std::mem::replace(&mut a, next));
        tapes.push(tape);
    }
    let (value, mut g) = loss.eval(&a, ex.target, ex.scale);
    if let Some(grad) = grad {
        for i in (0..params.depth()).rev() {
            let tape = tapes[i].as_ref().expect("tape kept");
            g = layer_backward(&inputs[i], &params.layers[i], ex.model, tape, &g, &mut grad.layers[i]);
        }
    }
    Ok(value)
}

/// Mean batch loss and its exact gradient with respect to every `A`, `B` and `nu`.
///
/// Complex parameters carry `dL/dRe + i dL/dIm`. Per-sample gradients are
/// computed in parallel and summed in sample order.
pub fn param_gradients(batch: &[Example], params: &UnfoldedParams, loss: LossKind) -> Result<(f64, UnfoldedParams)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let parts: Vec<(f64, UnfoldedParams)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = params.zeros_like();
            let v = sample_loss(ex, params, loss, Some(&mut g))?;
            Ok((v, g))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut value = 0.0;
    for (v, g) in &parts {
        value += v;
        total.add_assign(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((value * inv, total))
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(batch: &[Example], params: &UnfoldedParams, loss: LossKind) -> Result<f64> {
    use rayon::prelude::*;
    let values: Vec<f64> = batch.par_iter().map(|ex| sample_loss(ex, params, loss, None)).collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / batch.len().max(1) as f64)
}

#[cfg(test)]
mod tests;
