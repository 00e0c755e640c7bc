//! Per-antenna mean and covariance of the received signal as functions of
//! the activity vector, the expert covariance models, and the approximate
//! negative log-likelihood that the detectors minimize.
//!
//! Every device contributes to column `m` through two coefficients that only
//! depend on the grouping in force:
//!
//! * a covariance weight `w[m,k]`: `Xi[m,k]` for IRS devices, `1/(1+kappa_U)`
//!   for Rician devices, `1` for Rayleigh devices;
//! * a mean coefficient `e[m,k]`: the scaled cascaded LoS product for IRS
//!   devices, the scaled conjugate direct LoS entry for Rician devices, `0`
//!   for Rayleigh devices.
//!
//! so that `Sigma_m = sigma^2 I + sum_k a_k w[m,k] s_k s_k^H` and
//! `mean_m = sum_k a_k e[m,k] s_k`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{rician_weights, LosComponents};
use crate::error::{Error, Result};
use crate::linalg::{scaled_identity, CMat, CVec, HpdFactor, ZERO};
use crate::scenario::{DeviceGroup, ScenarioRealization};

/// Which covariance model the detector assumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpertKind {
    /// Every device treated as IRS-assisted.
    Expert1,
    /// Every device treated as direct Rician.
    Expert2,
    /// Every device treated as direct Rayleigh.
    Expert3,
    /// True group labels.
    PerfectGrouping,
}

impl ExpertKind {
    pub const EXPERTS: [ExpertKind; 3] = [ExpertKind::Expert1, ExpertKind::Expert2, ExpertKind::Expert3];
    pub const ALL: [ExpertKind; 4] =
        [ExpertKind::Expert1, ExpertKind::Expert2, ExpertKind::Expert3, ExpertKind::PerfectGrouping];

    pub fn index(self) -> usize {
        match self {
            ExpertKind::Expert1 => 0,
            ExpertKind::Expert2 => 1,
            ExpertKind::Expert3 => 2,
            ExpertKind::PerfectGrouping => 3,
        }
    }

    /// Expert that assumes every device is in `group`.
    pub fn for_group(group: DeviceGroup) -> Self {
        Self::EXPERTS[group.index()]
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::Expert1 => "expert1",
            ExpertKind::Expert2 => "expert2",
            ExpertKind::Expert3 => "expert3",
            ExpertKind::PerfectGrouping => "perfect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Cascaded covariance weight
/// `(N + kappa_B ||g_m^LoS||^2 + kappa ||h_k^LoS||^2) / ((1+kappa_B)(1+kappa))`.
///
/// `kappa` is the direct-link factor unless the IRS-link override is enabled.
pub fn xi_value(n: usize, kappa_b: f64, kappa: f64, g_norm_sq: f64, h_norm_sq: f64) -> f64 {
    (n as f64 + kappa_b * g_norm_sq + kappa * h_norm_sq) / ((1.0 + kappa_b) * (1.0 + kappa))
}

/// Everything the likelihood needs besides `Y` and `a`.
#[derive(Clone, Debug)]
pub struct ModelContext {
    /// L x K signatures.
    pub s: CMat,
    /// `c[m,k] = (h_k^LoS)^H Theta g_m^LoS`, M x K.
    pub cascade_los: CMat,
    /// `conj(f_k^LoS(m))`, M x K.
    pub direct_los_conj: CMat,
    /// M x K.
    pub xi: DMatrix<f64>,
    pub kappa_u: f64,
    pub kappa_r: f64,
    pub kappa_b: f64,
    pub noise_power: f64,
    pub groups: Option<Vec<DeviceGroup>>,
    kind: ExpertKind,
    weights: DMatrix<f64>,
    mean_coefs: CMat,
}

impl ModelContext {
    /// Perfect-grouping model of a deployed scenario.
    pub fn from_scenario(
        scenario: &ScenarioRealization,
        los: &LosComponents,
        theta: &[Complex64],
        s: &CMat,
        noise_power: f64,
    ) -> Result<Self> {
        let cfg = &scenario.config;
        let (m, n, k) = (cfg.antennas, cfg.irs_elements, scenario.devices());
        if s.ncols() != k || theta.len() != n {
            return Err(Error::Dimension("signature or phase dimensions disagree with scenario".into()));
        }
        let cascade_los = CMat::from_fn(m, k, |mi, ki| {
            (0..n).fold(ZERO, |acc, i| acc + los.h_los[(i, ki)].conj() * theta[i] * los.g_los[(i, mi)])
        });
        let direct_los_conj = los.f_los.map(|x| x.conj());
        let kappa_xi = if cfg.xi_uses_kappa_r { cfg.kappa_r } else { cfg.kappa_u };
        let xi = DMatrix::from_fn(m, k, |mi, ki| {
            xi_value(
                n,
                cfg.kappa_b,
                kappa_xi,
                los.g_los.column(mi).norm_squared(),
                los.h_los.column(ki).norm_squared(),
            )
        });
        Self::from_parts(
            s.clone(),
            cascade_los,
            direct_los_conj,
            xi,
            [cfg.kappa_u, cfg.kappa_r, cfg.kappa_b],
            noise_power,
            Some(scenario.groups.clone()),
            ExpertKind::PerfectGrouping,
        )
    }

    /// Assembles a model from explicit tables. `kappas` is `[kappa_U, kappa_R, kappa_B]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        s: CMat,
        cascade_los: CMat,
        direct_los_conj: CMat,
        xi: DMatrix<f64>,
        kappas: [f64; 3],
        noise_power: f64,
        groups: Option<Vec<DeviceGroup>>,
        kind: ExpertKind,
    ) -> Result<Self> {
        let (m, k) = (cascade_los.nrows(), s.ncols());
        if cascade_los.ncols() != k || direct_los_conj.shape() != (m, k) || xi.shape() != (m, k) {
            return Err(Error::Dimension("LoS tables must all be M x K".into()));
        }
        if groups.as_ref().is_some_and(|g| g.len() != k) {
            return Err(Error::Dimension("group labels must cover every device".into()));
        }
        if !(noise_power > 0.0) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        let [kappa_u, kappa_r, kappa_b] = kappas;
        let mut model = Self {
            s,
            cascade_los,
            direct_los_conj,
            xi,
            kappa_u,
            kappa_r,
            kappa_b,
            noise_power,
            groups,
            kind: ExpertKind::PerfectGrouping,
            weights: DMatrix::zeros(m, k),
            mean_coefs: CMat::zeros(m, k),
        };
        model.set_expert(kind)?;
        Ok(model)
    }

    pub fn signature_len(&self) -> usize {
        self.s.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.cascade_los.nrows()
    }

    pub fn devices(&self) -> usize {
        self.s.ncols()
    }

    pub fn expert(&self) -> ExpertKind {
        self.kind
    }

    /// Group device `k` is treated as under the current model.
    pub fn effective_group(&self, k: usize) -> DeviceGroup {
        match self.kind {
            ExpertKind::PerfectGrouping => self.groups.as_ref().expect("perfect grouping has labels")[k],
            e => DeviceGroup::ALL[e.index()],
        }
    }

    pub fn set_expert(&mut self, kind: ExpertKind) -> Result<()> {
        if kind == ExpertKind::PerfectGrouping && self.groups.is_none() {
            return Err(Error::Config("perfect grouping requires group labels".into()));
        }
        self.kind = kind;
        let (m, k) = self.xi.shape();
        let (los_r, _) = rician_weights(self.kappa_r);
        let (los_b, _) = rician_weights(self.kappa_b);
        let (los_u, _) = rician_weights(self.kappa_u);
        for ki in 0..k {
            let group = self.effective_group(ki);
            for mi in 0..m {
                let (w, e) = match group {
                    DeviceGroup::Irs => (self.xi[(mi, ki)], self.cascade_los[(mi, ki)] * (los_r * los_b)),
                    DeviceGroup::Rician => (1.0 / (1.0 + self.kappa_u), self.direct_los_conj[(mi, ki)] * los_u),
                    DeviceGroup::Rayleigh => (1.0, ZERO),
                };
                self.weights[(mi, ki)] = w;
                self.mean_coefs[(mi, ki)] = e;
            }
        }
        Ok(())
    }

    pub fn with_expert(&self, kind: ExpertKind) -> Result<Self> {
        let mut out = self.clone();
        out.set_expert(kind)?;
        Ok(out)
    }

    /// Same model with a different noise power (unit changes).
    pub fn with_noise_power(&self, noise_power: f64) -> Self {
        Self { noise_power, ..self.clone() }
    }

    /// Covariance weight `w[m,k]`.
    pub fn cov_weight(&self, m: usize, k: usize) -> f64 {
        self.weights[(m, k)]
    }

    /// Mean coefficient `e[m,k]`; `d mean_m / d a_k = e[m,k] s_k`.
    pub fn mean_coef(&self, m: usize, k: usize) -> Complex64 {
        self.mean_coefs[(m, k)]
    }

    pub fn xi(&self, m: usize, k: usize) -> f64 {
        self.xi[(m, k)]
    }

    /// All covariance weights, M x K.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// All mean coefficients, M x K.
    pub fn mean_coefs(&self) -> &CMat {
        &self.mean_coefs
    }

    /// `mean_m = sum_k a_k e[m,k] s_k`.
    pub fn mean_ym(&self, m: usize, a: &[f64]) -> CVec {
        let coefs = CVec::from_fn(self.devices(), |k, _| self.mean_coefs[(m, k)] * a[k]);
        &self.s * coefs
    }

    /// `Sigma_m = sigma^2 I_L + sum_k a_k w[m,k] s_k s_k^H`.
    pub fn covariance_ym(&self, m: usize, a: &[f64]) -> CMat {
        let l = self.signature_len();
        let mut scaled = self.s.clone();
        for k in 0..self.devices() {
            let c = a[k] * self.weights[(m, k)];
            scaled.column_mut(k).scale_mut(c);
        }
        let mut sigma = &scaled * self.s.adjoint();
        sigma += scaled_identity(l, self.noise_power);
        // exact Hermitian symmetry for the factorization
        for i in 0..l {
            sigma[(i, i)].im = 0.0;
            for j in 0..i {
                let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)].conj());
                sigma[(i, j)] = v;
                sigma[(j, i)] = v.conj();
            }
        }
        sigma
    }

    pub fn check_inputs(&self, y: &CMat, a: &[f64]) -> Result<()> {
        if y.shape() != (self.signature_len(), self.antennas()) {
            return Err(Error::Dimension(format!(
                "Y is {:?}, expected {}x{}",
                y.shape(),
                self.signature_len(),
                self.antennas()
            )));
        }
        if a.len() != self.devices() {
            return Err(Error::Dimension(format!("activity has {} entries, expected {}", a.len(), self.devices())));
        }
        if y.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::Data("received matrix contains non-finite entries".into()));
        }
        Ok(())
    }

    /// `sum_m log|Sigma_m| + (y_m - mean_m)^H Sigma_m^{-1} (y_m - mean_m)`, without the `L log pi` constant.
    pub fn nll(&self, y: &CMat, a: &[f64]) -> Result<f64> {
        self.check_inputs(y, a)?;
        let mut total = 0.0;
        for m in 0..self.antennas() {
            let factor = HpdFactor::new(&self.covariance_ym(m, a))?;
            let r = y.column(m) - self.mean_ym(m, a);
            let q = factor.solve_vec(&r);
            total += factor.log_det() + r.dotc(&q).re;
        }
        Ok(total)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::rng::{complex_normal, SimRng};
    use rand::{Rng, SeedableRng};

    /// Random small model with mixed groups and unit-modulus LoS scalars.
    pub fn random_model(l: usize, m: usize, k: usize, seed: u64) -> ModelContext {
        let mut rng = SimRng::seed_from_u64(seed);
        let s = CMat::from_fn(l, k, |_, _| complex_normal(&mut rng));
        let cascade = CMat::from_fn(m, k, |_, _| complex_normal(&mut rng) * 3.0);
        let direct = CMat::from_fn(m, k, |_, _| Complex64::from_polar(1.0, rng.random::<f64>() * 6.28));
        let xi = DMatrix::from_fn(m, k, |_, _| 0.5 + 2.0 * rng.random::<f64>());
        let groups = (0..k).map(|i| DeviceGroup::ALL[i % 3]).collect();
        ModelContext::from_parts(
            s,
            cascade,
            direct,
            xi,
            [10.0, 10.0, 10.0],
            0.3 + rng.random::<f64>(),
            Some(groups),
            ExpertKind::PerfectGrouping,
        )
        .unwrap()
    }

    pub fn random_y(l: usize, m: usize, scale: f64, seed: u64) -> CMat {
        let mut rng = SimRng::seed_from_u64(seed);
        CMat::from_fn(l, m, |_, _| complex_normal(&mut rng) * scale)
    }

    pub fn random_activity(k: usize, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::seed_from_u64(seed);
        (0..k).map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() * 2.0 } else { 0.0 }).collect()
    }
}
