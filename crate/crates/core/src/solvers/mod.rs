//! Classical solvers for the non-negative activity estimation problem.

mod cd;
mod gradient;
mod pgd;

pub use cd::{cd_solve, CdOptions, CdResult, CdSolver};
pub use gradient::{gradient, objective_and_gradient, project_nonnegative};
pub use pgd::{pgd_solve, PgdOptions, PgdResult, StepRule};
