//! Covariance-based device activity detection for IRS-aided grant-free
//! random access.
//!
//! The crate simulates mixed-fading received frames (IRS-assisted, direct
//! Rician and direct Rayleigh devices), estimates device activity by
//! projected gradient descent and coordinate descent on the approximate
//! per-antenna likelihood, and provides a trainable deep-unfolded PGD
//! detector whose covariance model is picked per frame by a small gating
//! network.

pub mod channel;
pub mod covstats;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod moe;
pub mod optim;
pub mod rng;
pub mod scenario;
pub mod signal;
pub mod solvers;
pub mod unfolding;

pub use error::{Error, Result};
