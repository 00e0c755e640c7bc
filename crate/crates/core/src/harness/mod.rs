//! Detection metrics, detectors and experiment drivers.

pub mod detectors;
pub mod experiment;
pub mod metrics;

pub use detectors::{Detection, Detector, DetectorSpec};
pub use experiment::{bench, run_monte_carlo, sweep_group_mix, BenchRow, DetectorRun, MonteCarloReport, SweepPoint};
pub use metrics::{equal_error_rate, pm_pf, roc_sweep, DetectionResult, EqualErrorRate, RocPoint};
