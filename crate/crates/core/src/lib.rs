//! Asymptotically distribution-free (ADF) goodness-of-fit tests for regression
//! models.
//!
//! Two testing problems are covered:
//!
//! * fitting an error distribution `F` to the residuals of a parametric
//!   regression model, via a martingale transform of the residual empirical
//!   process whose null limit is standard Brownian motion on `[0, 1]`
//!   ([`error_gof`]);
//! * fitting the regression function itself, with the error law unknown, via a
//!   scanning innovation transform of partial-sum processes whose null limit
//!   is a Brownian sheet indexed by the design distribution
//!   ([`regression_gof`]).
//!
//! The limit laws needed to turn the sup statistics into p-values — the law of
//! `sup |W|` on `[0, 1]` and the two-parameter law `L_r` — live in
//! [`limit_laws`]. Null-model parameter estimation (maximum likelihood,
//! general M-estimators, nonlinear least squares) is in [`estimation`], and
//! the score/Γ-matrix machinery behind the transforms is in [`error_models`]
//! and [`transform_core`].

pub mod dataset;
pub mod error;
pub mod error_gof;
pub mod error_models;
pub mod estimation;
pub mod limit_laws;
pub mod linalg;
pub mod quad;
pub mod regression_gof;
pub mod report;
pub mod rng;
pub mod transform_core;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use error_gof::{ProcessPath, SignConvention};
pub use error_models::{ErrorModel, PhiFamily};
pub use estimation::{FitOptions, FitResult, RegressionModel};
pub use limit_laws::LimitLaw;
pub use report::TestReport;
