//! Small-scale fading: Rician draws around deterministic line-of-sight
//! components, and the IRS phase configuration.
//!
//! Both the BS and the IRS are modelled as half-wavelength uniform linear
//! arrays; line-of-sight components are steering vectors at the azimuth
//! between the two endpoints.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, ZERO};
use crate::rng::complex_normal;
use crate::scenario::{DeviceGroup, Point, ScenarioRealization};

/// ULA response: entry `i` is `exp(j pi i sin(angle))`.
pub fn steering_vector(n_elems: usize, angle: f64) -> CVec {
    let phase = PI * angle.sin();
    CVec::from_fn(n_elems, |i, _| Complex64::from_polar(1.0, phase * i as f64))
}

/// `sqrt(k/(1+k)) los + sqrt(1/(1+k)) w` with `w ~ CN(0, I)`.
pub fn sample_rician<R: Rng + ?Sized>(los: &CVec, kappa: f64, rng: &mut R) -> Result<CVec> {
    if !(kappa >= 0.0) {
        return Err(Error::Domain(format!("Rician factor must be non-negative, got {kappa}")));
    }
    let (los_w, nlos_w) = rician_weights(kappa);
    Ok(CVec::from_fn(los.len(), |i, _| los[i] * los_w + complex_normal(rng) * nlos_w))
}

/// `(sqrt(k/(1+k)), sqrt(1/(1+k)))`.
pub fn rician_weights(kappa: f64) -> (f64, f64) {
    ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
}

/// I.i.d. uniform phases on `[0, 2pi)`, one per IRS element.
pub fn generate_phase_shifts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>())).collect()
}

fn azimuth(from: &Point, to: &Point) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

/// Deterministic line-of-sight components of a scenario.
///
/// Columns are per device (`f_los`, `h_los`) or per BS antenna (`g_los`).
/// Both the direct and the IRS components are computed for every device,
/// regardless of its group, so expert models can apply either to anyone.
#[derive(Clone, Debug)]
pub struct LosComponents {
    /// M x K.
    pub f_los: CMat,
    /// N x K.
    pub h_los: CMat,
    /// N x M.
    pub g_los: CMat,
}

impl LosComponents {
    pub fn from_scenario(scenario: &ScenarioRealization) -> Self {
        let cfg = &scenario.config;
        let geo = &cfg.geometry;
        let (m, n, k) = (cfg.antennas, cfg.irs_elements, scenario.devices());

        let mut f_los = CMat::zeros(m, k);
        let mut h_los = CMat::zeros(n, k);
        for (j, pos) in scenario.positions.iter().enumerate() {
            f_los.set_column(j, &steering_vector(m, azimuth(&geo.bs, pos)));
            h_los.set_column(j, &steering_vector(n, azimuth(&geo.irs, pos)));
        }
        // per-antenna IRS->BS component: IRS departure response times the BS arrival phase
        let depart = steering_vector(n, azimuth(&geo.irs, &geo.bs));
        let arrive = steering_vector(m, azimuth(&geo.bs, &geo.irs));
        let g_los = CMat::from_fn(n, m, |i, j| depart[i] * arrive[j]);
        Self { f_los, h_los, g_los }
    }
}

/// One draw of all small-scale fading in a scenario.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    /// Device -> BS, M x K (zero columns for IRS devices).
    pub f: CMat,
    /// Device -> IRS, N x K (zero columns for direct devices).
    pub h: CMat,
    /// IRS -> BS antenna m, N x M.
    pub g: CMat,
    /// Diagonal of the IRS phase matrix.
    pub theta: Vec<Complex64>,
}

impl ChannelRealization {
    /// Row vector `h_k^H Theta G` of length M.
    pub fn cascaded(&self, k: usize) -> CVec {
        let n = self.h.nrows();
        CVec::from_fn(self.g.ncols(), |m, _| {
            (0..n).fold(ZERO, |acc, i| acc + self.h[(i, k)].conj() * self.theta[i] * self.g[(i, m)])
        })
    }
}

/// Draws f, h and g for the scenario; Theta is fixed per scenario and passed in.
pub fn sample_channels<R: Rng + ?Sized>(
    scenario: &ScenarioRealization,
    los: &LosComponents,
    theta: &[Complex64],
    rng: &mut R,
) -> Result<ChannelRealization> {
    let cfg = &scenario.config;
    let (m, n, k) = (cfg.antennas, cfg.irs_elements, scenario.devices());
    if theta.len() != n {
        return Err(Error::Dimension(format!("phase vector has {} entries, expected {n}", theta.len())));
    }
    let mut f = CMat::zeros(m, k);
    let mut h = CMat::zeros(n, k);
    for (j, g) in scenario.groups.iter().enumerate() {
        match g {
            DeviceGroup::Irs => h.set_column(j, &sample_rician(&los.h_los.column(j).into(), cfg.kappa_r, rng)?),
            DeviceGroup::Rician => f.set_column(j, &sample_rician(&los.f_los.column(j).into(), cfg.kappa_u, rng)?),
            DeviceGroup::Rayleigh => f.set_column(j, &sample_rician(&los.f_los.column(j).into(), 0.0, rng)?),
        }
    }
    let mut g = CMat::zeros(n, m);
    for j in 0..m {
        g.set_column(j, &sample_rician(&los.g_los.column(j).into(), cfg.kappa_b, rng)?);
    }
    Ok(ChannelRealization { f, h, g, theta: theta.to_vec() })
}
