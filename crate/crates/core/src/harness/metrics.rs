//! Pooled miss / false-alarm probabilities, ROC sweeps and equal-error rates.

use crate::error::{Error, Result};

/// Estimated activities of one frame and the truth they are scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub a_hat: Vec<f64>,
    pub b_true: Vec<bool>,
    pub detector: String,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub pf: f64,
    pub pm: f64,
    pub trials: usize,
}

/// Detection counts at one threshold, pooled over devices and frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub active: usize,
    pub inactive: usize,
    pub hits: usize,
    pub false_alarms: usize,
}

impl Counts {
    pub fn of(result: &DetectionResult, threshold: f64) -> Self {
        let mut c = Counts::default();
        for (&x, &b) in result.a_hat.iter().zip(&result.b_true) {
            let fired = x >= threshold;
            if b {
                c.active += 1;
                c.hits += fired as usize;
            } else {
                c.inactive += 1;
                c.false_alarms += fired as usize;
            }
        }
        c
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            active: self.active + o.active,
            inactive: self.inactive + o.inactive,
            hits: self.hits + o.hits,
            false_alarms: self.false_alarms + o.false_alarms,
        }
    }

    /// `(PM, PF)`.
    pub fn rates(self) -> Result<(f64, f64)> {
        if self.active == 0 {
            return Err(Error::UndefinedMetric("no active devices in the pool; PM is undefined".into()));
        }
        if self.inactive == 0 {
            return Err(Error::UndefinedMetric("no inactive devices in the pool; PF is undefined".into()));
        }
        let pm = 1.0 - self.hits as f64 / self.active as f64;
        let pf = self.false_alarms as f64 / self.inactive as f64;
        Ok((pm, pf))
    }
}

fn pooled(results: &[DetectionResult], threshold: f64) -> Counts {
    results.iter().map(|r| Counts::of(r, threshold)).fold(Counts::default(), Counts::merge)
}

/// `(PM, PF)` with `b_hat = [a_hat >= threshold]`, pooled over all frames.
pub fn pm_pf(results: &[DetectionResult], threshold: f64) -> Result<(f64, f64)> {
    pooled(results, threshold).rates()
}

/// One point per threshold; thresholds must be ascending.
pub fn roc_sweep(results: &[DetectionResult], thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Domain("thresholds must be sorted ascending".into()));
    }
    thresholds
        .iter()
        .map(|&threshold| {
            let (pm, pf) = pm_pf(results, threshold)?;
            Ok(RocPoint { threshold, pf, pm, trials: results.len() })
        })
        .collect()
}

/// Median of the strictly positive estimates.
pub fn median_positive(results: &[DetectionResult]) -> Result<f64> {
    let mut pos: Vec<f64> = results.iter().flat_map(|r| r.a_hat.iter().copied()).filter(|&x| x > 0.0).collect();
    if pos.is_empty() {
        return Err(Error::UndefinedMetric("every estimate is zero; no threshold grid can be formed".into()));
    }
    pos.sort_by(|a, b| a.total_cmp(b));
    let n = pos.len();
    Ok(if n % 2 == 1 { pos[n / 2] } else { 0.5 * (pos[n / 2 - 1] + pos[n / 2]) })
}

pub const GRID_POINTS: usize = 50;
pub const GRID_LOW: f64 = 1e-3;
pub const GRID_HIGH: f64 = 10.0;

/// 50 log-spaced thresholds over `[1e-3, 10] x median(a_hat > 0)`.
pub fn default_thresholds(results: &[DetectionResult]) -> Result<Vec<f64>> {
    let med = median_positive(results)?;
    let (lo, hi) = ((GRID_LOW * med).ln(), (GRID_HIGH * med).ln());
    Ok((0..GRID_POINTS).map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqualErrorRate {
    pub threshold: f64,
    /// `(PF + PM) / 2` at `threshold`.
    pub rate: f64,
    pub pf: f64,
    pub pm: f64,
    /// False when `PF - PM` has the same sign at both ends of the grid span;
    /// `threshold` is then the nearer boundary.
    pub bracketed: bool,
}

pub const EER_TOL: f64 = 1e-4;
pub const EER_MAX_ITERS: usize = 60;

/// Bisection on the threshold (geometric midpoints) over the default grid span
/// until `|PF - PM| < 1e-4` or 60 iterations.
pub fn equal_error_rate(results: &[DetectionResult]) -> Result<EqualErrorRate> {
    let med = median_positive(results)?;
    let mut lo = GRID_LOW * med;
    let mut hi = GRID_HIGH * med;
    let at = |t: f64| -> Result<EqualErrorRate> {
        let (pm, pf) = pm_pf(results, t)?;
        Ok(EqualErrorRate { threshold: t, rate: 0.5 * (pf + pm), pf, pm, bracketed: true })
    };
    let low = at(lo)?;
    let high = at(hi)?;
    // PF - PM is non-increasing in the threshold
    if low.pf - low.pm < 0.0 {
        return Ok(EqualErrorRate { bracketed: false, ..low });
    }
    if high.pf - high.pm > 0.0 {
        return Ok(EqualErrorRate { bracketed: false, ..high });
    }
    if (low.pf - low.pm).abs() < EER_TOL {
        return Ok(low);
    }
    if (high.pf - high.pm).abs() < EER_TOL {
        return Ok(high);
    }
    let mut mid = at((lo * hi).sqrt())?;
    for _ in 0..EER_MAX_ITERS {
        let gap = mid.pf - mid.pm;
        if gap.abs() < EER_TOL {
            break;
        }
        if gap > 0.0 {
            lo = mid.threshold;
        } else {
            hi = mid.threshold;
        }
        mid = at((lo * hi).sqrt())?;
    }
    Ok(mid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn result(a_hat: Vec<f64>, b: Vec<bool>) -> DetectionResult {
        DetectionResult { a_hat, b_true: b, detector: "test".into(), seconds: 0.0 }
    }

    fn random_results(seed: u64, n: usize) -> Vec<DetectionResult> {
        let mut rng = SimRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let b: Vec<bool> = (0..10).map(|_| rng.random::<f64>() < 0.3).collect();
                let a = b.iter().map(|&x| if x { rng.random::<f64>() + 0.3 } else { rng.random::<f64>() * 0.8 }).collect();
                result(a, b)
            })
            .collect()
    }

    #[test]
    fn boundary_thresholds() {
        let rs = random_results(1, 20);
        assert_eq!(pm_pf(&rs, 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(pm_pf(&rs, f64::INFINITY).unwrap(), (1.0, 0.0));
        let roc = roc_sweep(&rs, &[0.0, f64::INFINITY]).unwrap();
        assert_eq!((roc[0].pf, roc[0].pm), (1.0, 0.0));
        assert_eq!((roc[1].pf, roc[1].pm), (0.0, 1.0));
    }

    #[test]
    fn perfect_detector() {
        let gains = [0.4, 1.0, 2.5, 0.7];
        let b = vec![true, false, true, true];
        let a: Vec<f64> = gains.iter().zip(&b).map(|(g, &x)| if x { *g } else { 0.0 }).collect();
        let rs = vec![result(a, b)];
        assert_eq!(pm_pf(&rs, 0.5 * 0.4).unwrap(), (0.0, 0.0));
        let eer = equal_error_rate(&rs).unwrap();
        assert_eq!(eer.rate, 0.0);
    }

    #[test]
    fn degenerate_pools_are_errors() {
        let all_on = vec![result(vec![1.0, 2.0], vec![true, true])];
        let err = pm_pf(&all_on, 0.5).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(ref m) if m.contains("inactive")));
        let all_off = vec![result(vec![1.0, 2.0], vec![false, false])];
        assert!(matches!(pm_pf(&all_off, 0.5).unwrap_err(), Error::UndefinedMetric(ref m) if m.contains("active")));
    }

    #[test]
    fn chance_detector_is_near_one_half() {
        let mut rng = SimRng::seed_from_u64(5);
        let rs: Vec<DetectionResult> = (0..400)
            .map(|_| {
                let b: Vec<bool> = (0..20).map(|_| rng.random::<f64>() < 0.5).collect();
                let a = (0..20).map(|_| rng.random::<f64>()).collect();
                result(a, b)
            })
            .collect();
        let eer = equal_error_rate(&rs).unwrap();
        assert!((eer.rate - 0.5).abs() < 0.05, "{eer:?}");
        assert!(eer.bracketed);
    }

    #[test]
    fn bisection_stays_inside_bracket() {
        let rs = random_results(3, 50);
        let med = median_positive(&rs).unwrap();
        let eer = equal_error_rate(&rs).unwrap();
        assert!(eer.threshold >= GRID_LOW * med && eer.threshold <= GRID_HIGH * med);
    }

    #[test]
    fn default_grid_spans_the_median() {
        let rs = vec![result(vec![0.0, 1.0, 2.0, 3.0], vec![true, false, true, false])];
        let g = default_thresholds(&rs).unwrap();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2e-3).abs() < 1e-15);
        assert!((g[49] - 20.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        let rs = random_results(1, 3);
        assert!(roc_sweep(&rs, &[1.0, 0.5]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn roc_is_monotone(seed in 0u64..10_000) {
            let rs = random_results(seed, 10);
            let grid = default_thresholds(&rs).unwrap();
            let roc = roc_sweep(&rs, &grid).unwrap();
            for w in roc.windows(2) {
                prop_assert!(w[1].pf <= w[0].pf);
                prop_assert!(w[1].pm >= w[0].pm);
            }
            prop_assert!(roc.iter().all(|p| (0.0..=1.0).contains(&p.pf) && (0.0..=1.0).contains(&p.pm)));
        }

        #[test]
        fn pooling_equals_concatenation(seed in 0u64..10_000, t in 0.0f64..1.5) {
            let rs = random_results(seed, 6);
            let cat = vec![result(
                rs.iter().flat_map(|r| r.a_hat.clone()).collect(),
                rs.iter().flat_map(|r| r.b_true.clone()).collect(),
            )];
            let (pooled, joined) = (pm_pf(&rs, t), pm_pf(&cat, t));
            prop_assert_eq!(pooled.is_ok(), joined.is_ok());
            if let (Ok(a), Ok(b)) = (pooled, joined) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
