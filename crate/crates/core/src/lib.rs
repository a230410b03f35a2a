//! Minimax-optimal fair linear regression under demographic parity.
//!
//! Data follow a Gaussian group model: `X | S = s ~ N(mu_s, sigma_x^2 I)` and
//! `Y = <beta_s, X> + xi` with `xi ~ N(0, sigma_xi^2)`. The crate provides the
//! optimal fair regressor for known parameters, a sample-split plugin
//! estimator, fairness and accuracy metrics, lower-bound instance machinery,
//! and a seeded experiment harness.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod gaussian;
pub mod linalg;
pub mod lower_bound;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod vecops;

pub use error::{Error, Result};
pub use estimator::{fit, ComponentEstimates};
pub use experiments::{fit_slope, run_lower_bound_report, run_sweep, SweepConfig, SweepResult};
pub use metrics::{mc_excess_risk, unfairness, UnfairnessReport};
pub use model::{
    random_valid_params, sample_dataset, validate_params, Dataset, GroupAffineRegressor, ModelParams,
    RandomValidSpec, Regressor,
};
pub use oracle::{analytic_excess_risk, build_fdp, quantile_compose_fdp, FairOracle};
