//! Signature sequences and the received-signal model.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng::complex_normal;
use crate::scenario::{ActivityVector, DeviceGroup, ScenarioRealization};

/// L x K signature matrix with i.i.d. CN(0, 1) entries; column k is `s_k`.
pub fn generate_signatures<R: Rng + ?Sized>(k: usize, l: usize, rng: &mut R) -> CMat {
    // column-major fill so each column is one contiguous run of draws
    CMat::from_iterator(l, k, (0..l * k).map(|_| complex_normal(rng)))
}

/// A received frame and the signatures that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBatch {
    /// L x K.
    pub s: CMat,
    /// L x M.
    pub y: CMat,
    pub noise_power: f64,
}

fn check_dims(scenario: &ScenarioRealization, channels: &ChannelRealization, activity: &ActivityVector, s: &CMat) -> Result<()> {
    let cfg = &scenario.config;
    let k = scenario.devices();
    let checks = [
        ("signature rows", s.nrows(), cfg.signature_len),
        ("signature columns", s.ncols(), k),
        ("activity length", activity.a.len(), k),
        ("f columns", channels.f.ncols(), k),
        ("f rows", channels.f.nrows(), cfg.antennas),
        ("h columns", channels.h.ncols(), k),
        ("g columns", channels.g.ncols(), cfg.antennas),
        ("g rows", channels.g.nrows(), cfg.irs_elements),
        ("h rows", channels.h.nrows(), cfg.irs_elements),
    ];
    for (what, got, want) in checks {
        if got != want {
            return Err(Error::Dimension(format!("{what}: got {got}, expected {want}")));
        }
    }
    Ok(())
}

/// Noise-free part of the received signal:
/// `sum_{K1} a_k s_k h_k^H Theta G + sum_{K2,K3} a_k s_k f_k^H`.
pub fn received_signal(
    scenario: &ScenarioRealization,
    channels: &ChannelRealization,
    activity: &ActivityVector,
    s: &CMat,
) -> Result<CMat> {
    check_dims(scenario, channels, activity, s)?;
    let (l, m) = (scenario.config.signature_len, scenario.config.antennas);
    let mut y = CMat::zeros(l, m);
    for (k, (&a, g)) in activity.a.iter().zip(&scenario.groups).enumerate() {
        if a == 0.0 {
            continue;
        }
        let row: Vec<Complex64> = match g {
            DeviceGroup::Irs => channels.cascaded(k).iter().copied().collect(),
            _ => channels.f.column(k).iter().map(|x| x.conj()).collect(),
        };
        for j in 0..m {
            let coef = row[j] * a;
            for i in 0..l {
                y[(i, j)] += s[(i, k)] * coef;
            }
        }
    }
    Ok(y)
}

/// Adds i.i.d. CN(0, noise_power) entries to `y`.
pub fn add_noise<R: Rng + ?Sized>(y: &mut CMat, noise_power: f64, rng: &mut R) {
    let sd = noise_power.sqrt();
    for x in y.iter_mut() {
        *x += complex_normal(rng) * sd;
    }
}

/// Received matrix Y (L x M) for one frame, noise power from the scenario config.
pub fn synthesize_received<R: Rng + ?Sized>(
    scenario: &ScenarioRealization,
    channels: &ChannelRealization,
    activity: &ActivityVector,
    s: &CMat,
    rng: &mut R,
) -> Result<CMat> {
    let mut y = received_signal(scenario, channels, activity, s)?;
    add_noise(&mut y, scenario.config.noise_power, rng);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_phase_shifts, sample_channels, LosComponents};
    use crate::rng::SimRng;
    use crate::scenario::{build_scenario, ScenarioConfig};
    use rand::SeedableRng;

    fn setup(seed: u64) -> (ScenarioRealization, LosComponents, Vec<Complex64>, CMat) {
        let s = build_scenario(&ScenarioConfig::desk_scale().with_seed(seed)).unwrap();
        let los = LosComponents::from_scenario(&s);
        let mut rng = SimRng::seed_from_u64(seed);
        let theta = generate_phase_shifts(s.config.irs_elements, &mut rng);
        let sig = generate_signatures(s.devices(), s.config.signature_len, &mut rng);
        (s, los, theta, sig)
    }

    #[test]
    fn signature_shape_seed_and_power() {
        let s = generate_signatures(100, 20, &mut SimRng::seed_from_u64(1));
        assert_eq!((s.nrows(), s.ncols()), (20, 100));
        assert_eq!(s, generate_signatures(100, 20, &mut SimRng::seed_from_u64(1)));
        let power = s.iter().map(|x| x.norm_sqr()).sum::<f64>() / 2000.0;
        assert!((power - 1.0).abs() < 0.02 * 2.5, "power {power}");
        let big = generate_signatures(100, 50, &mut SimRng::seed_from_u64(2));
        let power = big.iter().map(|x| x.norm_sqr()).sum::<f64>() / 5000.0;
        assert!((power - 1.0).abs() < 0.02, "power {power}");
        for i in 0..100 {
            for j in 0..i {
                assert_ne!(s.column(i), s.column(j));
            }
        }
    }

    #[test]
    fn silent_frame_is_noise() {
        let (s, los, theta, sig) = setup(3);
        let mut rng = SimRng::seed_from_u64(4);
        let act = ActivityVector::inactive(s.devices());
        let mut acc = 0.0;
        let mut count = 0usize;
        while count < 100_000 {
            let ch = sample_channels(&s, &los, &theta, &mut rng).unwrap();
            let y = synthesize_received(&s, &ch, &act, &sig, &mut rng).unwrap();
            acc += y.iter().map(|x| x.norm_sqr()).sum::<f64>();
            count += y.len();
        }
        let var = acc / count as f64;
        assert!((var / s.config.noise_power - 1.0).abs() < 0.02);
    }

    #[test]
    fn single_rayleigh_device_is_rank_one() {
        let (s, los, theta, sig) = setup(5);
        let k = s.groups.iter().position(|g| *g == DeviceGroup::Rayleigh).unwrap();
        let mut b = vec![false; s.devices()];
        b[k] = true;
        let act = ActivityVector::from_indicators(&s, b);
        let ch = sample_channels(&s, &los, &theta, &mut SimRng::seed_from_u64(6)).unwrap();
        let y = received_signal(&s, &ch, &act, &sig).unwrap();
        let want = sig.column(k) * ch.f.column(k).adjoint() * Complex64::new(act.a[k], 0.0);
        assert!((y - want).norm() < 1e-20);
    }

    #[test]
    fn linear_in_activity() {
        let (s, los, theta, sig) = setup(8);
        let ch = sample_channels(&s, &los, &theta, &mut SimRng::seed_from_u64(2)).unwrap();
        let b: Vec<bool> = (0..s.devices()).map(|i| i % 3 == 0).collect();
        let a1 = ActivityVector::from_indicators(&s, b.clone());
        let a2 = ActivityVector { b: b.clone(), a: a1.a.iter().map(|x| 2.0 * x).collect() };
        let y1 = received_signal(&s, &ch, &a1, &sig).unwrap();
        let y2 = received_signal(&s, &ch, &a2, &sig).unwrap();
        assert!((y2 - y1.clone() * Complex64::new(2.0, 0.0)).norm() <= 1e-12 * y1.norm());

        let odd: Vec<bool> = (0..s.devices()).map(|i| i % 3 == 1).collect();
        let both: Vec<bool> = b.iter().zip(&odd).map(|(x, y)| *x || *y).collect();
        let yo = received_signal(&s, &ch, &ActivityVector::from_indicators(&s, odd), &sig).unwrap();
        let yb = received_signal(&s, &ch, &ActivityVector::from_indicators(&s, both), &sig).unwrap();
        let scale = yb.norm();
        assert!((yb - (y1 + yo)).norm() <= 1e-12 * scale);
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let (s, los, theta, sig) = setup(1);
        let ch = sample_channels(&s, &los, &theta, &mut SimRng::seed_from_u64(2)).unwrap();
        let act = ActivityVector::inactive(s.devices() - 1);
        assert!(matches!(received_signal(&s, &ch, &act, &sig), Err(Error::Dimension(_))));
    }
}
