//! Physical layout: device placement, group labels, large-scale fading and
//! activity sampling.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{db_to_linear, dbm_to_watts};
use crate::rng::{self, streams};

/// Channel type of a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceGroup {
    /// Direct link blocked; reaches the BS only through the IRS (K1).
    Irs,
    /// Direct Rician link (K2).
    Rician,
    /// Direct Rayleigh link (K3).
    Rayleigh,
}

impl DeviceGroup {
    pub const ALL: [DeviceGroup; 3] = [DeviceGroup::Irs, DeviceGroup::Rician, DeviceGroup::Rayleigh];

    pub fn index(self) -> usize {
        match self {
            DeviceGroup::Irs => 0,
            DeviceGroup::Rician => 1,
            DeviceGroup::Rayleigh => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_direct(self) -> bool {
        !matches!(self, DeviceGroup::Irs)
    }
}

pub type Point = [f64; 3];

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Site geometry in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub bs: Point,
    pub irs: Point,
    pub irs_center: Point,
    pub irs_radius: f64,
    pub direct_center: Point,
    pub direct_radius: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0, 10.0],
            irs: [5.0, 50.0, 10.0],
            irs_center: [200.0, 0.0, 0.0],
            irs_radius: 40.0,
            direct_center: [0.0, 120.0, 0.0],
            direct_radius: 40.0,
        }
    }
}

/// Scenario parameters, stored in linear units.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// BS antennas (M).
    pub antennas: usize,
    /// IRS reflecting elements (N).
    pub irs_elements: usize,
    /// Potential devices (K).
    pub devices: usize,
    /// Signature length (L).
    pub signature_len: usize,
    /// Fractions of devices in the IRS, Rician and Rayleigh groups.
    pub group_proportions: [f64; 3],
    pub kappa_u: f64,
    pub kappa_r: f64,
    pub kappa_b: f64,
    /// Noise power in watts.
    pub noise_power: f64,
    /// Per-device transmit power in watts.
    pub tx_power: f64,
    pub activity_prob: f64,
    pub geometry: Geometry,
    pub seed: u64,
    /// Use the IRS-link Rician factor in the cascaded covariance weight
    /// instead of the direct-link one.
    pub xi_uses_kappa_r: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            irs_elements: 40,
            devices: 100,
            signature_len: 20,
            group_proportions: [0.4, 0.3, 0.3],
            kappa_u: db_to_linear(10.0),
            kappa_r: db_to_linear(10.0),
            kappa_b: db_to_linear(10.0),
            noise_power: dbm_to_watts(-95.0),
            tx_power: dbm_to_watts(23.0),
            activity_prob: 0.2,
            geometry: Geometry::default(),
            seed: 0,
            xi_uses_kappa_r: false,
        }
    }
}

impl ScenarioConfig {
    /// Reduced dimensions used by the acceptance suite and quick experiments.
    pub fn desk_scale() -> Self {
        Self { antennas: 8, irs_elements: 32, devices: 24, signature_len: 8, ..Self::default() }
    }

    pub fn with_proportions(mut self, proportions: [f64; 3]) -> Self {
        self.group_proportions = proportions;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Mix-sweep proportions: `irs_fraction` in K1, the rest split evenly.
    pub fn with_irs_fraction(self, irs_fraction: f64) -> Self {
        let rest = (1.0 - irs_fraction) / 2.0;
        self.with_proportions([irs_fraction, rest, rest])
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("antennas", self.antennas),
            ("irs_elements", self.irs_elements),
            ("devices", self.devices),
            ("signature_len", self.signature_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let rho = self.group_proportions;
        if rho.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config(format!("group proportions must be non-negative, got {rho:?}")));
        }
        if (rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("group proportions must sum to 1, got {rho:?}")));
        }
        for (name, k) in [("kappa_u", self.kappa_u), ("kappa_r", self.kappa_r), ("kappa_b", self.kappa_b)] {
            if !(k >= 0.0) || k.is_infinite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {k}")));
            }
        }
        if !(self.noise_power > 0.0) || !self.noise_power.is_finite() {
            return Err(Error::Config("noise power must be positive".into()));
        }
        if !(self.tx_power > 0.0) || !self.tx_power.is_finite() {
            return Err(Error::Config("transmit power must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return Err(Error::Config(format!("activity probability {} outside [0, 1]", self.activity_prob)));
        }
        if !(self.geometry.irs_radius > 0.0) || !(self.geometry.direct_radius > 0.0) {
            return Err(Error::Config("placement radii must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = file.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile::from_config(self)).expect("config serializes")
    }
}

/// On-disk form of [`ScenarioConfig`]; powers and Rician factors in dB.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    antennas: usize,
    irs_elements: usize,
    devices: usize,
    signature_len: usize,
    group_proportions: [f64; 3],
    kappa_u_db: f64,
    kappa_r_db: f64,
    kappa_b_db: f64,
    noise_dbm: f64,
    tx_power_dbm: f64,
    activity_prob: f64,
    seed: u64,
    xi_uses_kappa_r: bool,
    geometry: Geometry,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self::from_config(&ScenarioConfig::default())
    }
}

fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl ConfigFile {
    fn from_config(c: &ScenarioConfig) -> Self {
        Self {
            antennas: c.antennas,
            irs_elements: c.irs_elements,
            devices: c.devices,
            signature_len: c.signature_len,
            group_proportions: c.group_proportions,
            kappa_u_db: to_db(c.kappa_u),
            kappa_r_db: to_db(c.kappa_r),
            kappa_b_db: to_db(c.kappa_b),
            noise_dbm: to_db(c.noise_power) + 30.0,
            tx_power_dbm: to_db(c.tx_power) + 30.0,
            activity_prob: c.activity_prob,
            seed: c.seed,
            xi_uses_kappa_r: c.xi_uses_kappa_r,
            geometry: c.geometry.clone(),
        }
    }

    fn into_config(self) -> ScenarioConfig {
        ScenarioConfig {
            antennas: self.antennas,
            irs_elements: self.irs_elements,
            devices: self.devices,
            signature_len: self.signature_len,
            group_proportions: self.group_proportions,
            kappa_u: db_to_linear(self.kappa_u_db),
            kappa_r: db_to_linear(self.kappa_r_db),
            kappa_b: db_to_linear(self.kappa_b_db),
            noise_power: dbm_to_watts(self.noise_dbm),
            tx_power: dbm_to_watts(self.tx_power_dbm),
            activity_prob: self.activity_prob,
            geometry: self.geometry,
            seed: self.seed,
            xi_uses_kappa_r: self.xi_uses_kappa_r,
        }
    }
}

/// Large-scale gain `10^((-60 - 22 log10(lambda_k * lambda_0)) / 10)`.
///
/// Direct-link devices pass their BS distance as `lambda_k` and `1.0` as `lambda_0`.
pub fn pathloss_gain(lambda_k: f64, lambda_0: f64) -> Result<f64> {
    if !(lambda_k > 0.0) || !(lambda_0 > 0.0) {
        return Err(Error::Domain(format!("distances must be positive, got {lambda_k} and {lambda_0}")));
    }
    let db = -60.0 - 22.0 * (lambda_k * lambda_0).log10();
    Ok(db_to_linear(db))
}

/// Group sizes from proportions by the largest-remainder rule (ties to the lower index).
pub fn group_sizes(proportions: [f64; 3], devices: usize) -> [usize; 3] {
    let quotas = proportions.map(|r| r * devices as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(devices.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// One placement of all devices.
#[derive(Clone, Debug)]
pub struct ScenarioRealization {
    pub positions: Vec<Point>,
    pub groups: Vec<DeviceGroup>,
    /// Large-scale gains, linear.
    pub beta: Vec<f64>,
    pub config: ScenarioConfig,
}

impl ScenarioRealization {
    pub fn devices(&self) -> usize {
        self.groups.len()
    }

    pub fn group_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for g in &self.groups {
            counts[g.index()] += 1;
        }
        counts
    }

    /// Active amplitude `sqrt(p_k beta_k)` of each device.
    pub fn gains(&self) -> Vec<f64> {
        self.beta.iter().map(|b| (self.config.tx_power * b).sqrt()).collect()
    }

    /// Median of `beta`.
    pub fn median_beta(&self) -> f64 {
        let mut sorted = self.beta.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        }
    }
}

fn sample_disc<R: Rng + ?Sized>(rng: &mut R, center: &Point, radius: f64, angle_lo: f64, angle_span: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = angle_lo + angle_span * rng.random::<f64>();
    [center[0] + r * phi.cos(), center[1] + r * phi.sin(), center[2]]
}

/// Places devices and assigns groups and large-scale gains.
pub fn build_scenario(config: &ScenarioConfig) -> Result<ScenarioRealization> {
    config.validate()?;
    let k = config.devices;
    let sizes = group_sizes(config.group_proportions, k);

    let mut groups: Vec<DeviceGroup> = DeviceGroup::ALL
        .iter()
        .zip(sizes)
        .flat_map(|(g, n)| std::iter::repeat_n(*g, n))
        .collect();
    let mut rng = rng::stream(config.seed, streams::GEOMETRY);
    groups.shuffle(&mut rng);

    let geo = &config.geometry;
    let lambda_0 = distance(&geo.irs, &geo.bs);
    let mut positions = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    for g in &groups {
        let (pos, b) = match g {
            DeviceGroup::Irs => {
                let pos = sample_disc(&mut rng, &geo.irs_center, geo.irs_radius, 0.0, 2.0 * PI);
                let b = pathloss_gain(distance(&pos, &geo.irs), lambda_0)?;
                (pos, b)
            }
            DeviceGroup::Rician | DeviceGroup::Rayleigh => {
                // left half-disc: x <= center x
                let pos = sample_disc(&mut rng, &geo.direct_center, geo.direct_radius, 0.5 * PI, PI);
                let b = pathloss_gain(distance(&pos, &geo.bs), 1.0)?;
                (pos, b)
            }
        };
        positions.push(pos);
        beta.push(b);
    }
    Ok(ScenarioRealization { positions, groups, beta, config: config.clone() })
}

/// Activity indicators and the amplitudes they gate.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityVector {
    pub b: Vec<bool>,
    /// `a_k = b_k sqrt(p_k beta_k)`.
    pub a: Vec<f64>,
}

impl ActivityVector {
    pub fn from_indicators(scenario: &ScenarioRealization, b: Vec<bool>) -> Self {
        let a = b.iter().zip(scenario.gains()).map(|(&on, g)| if on { g } else { 0.0 }).collect();
        Self { b, a }
    }

    pub fn inactive(k: usize) -> Self {
        Self { b: vec![false; k], a: vec![0.0; k] }
    }

    pub fn active_count(&self) -> usize {
        self.b.iter().filter(|&&x| x).count()
    }
}

/// Independent Bernoulli(activity_prob) draw per device.
pub fn sample_activity<R: Rng + ?Sized>(scenario: &ScenarioRealization, rng: &mut R) -> ActivityVector {
    let p = scenario.config.activity_prob;
    let b = (0..scenario.devices()).map(|_| rng.random::<f64>() < p).collect();
    ActivityVector::from_indicators(scenario, b)
}
