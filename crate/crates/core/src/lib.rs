//! Estimation and inference for best linear approximations to functions that
//! are only known to lie in a band `[theta0(x, a), theta1(x, a)]`.
//!
//! The band's envelopes may carry an index `a` (a quantile level, a threshold,
//! or a trivial singleton for mean regression) and are estimated by series
//! regression. The sharp identified set of linear-approximation coefficients
//! is a convex set, summarized by its support function; projections of the
//! support function give bounds on individual coefficients and on arbitrary
//! linear combinations. Inference is by Bayesian bootstrap: all estimation
//! steps are re-run under i.i.d. unit-exponential observation weights.
//!
//! Module map:
//! - [`dataset`]: data ingestion, validation, jittering of discrete
//!   regressors, selection transforms.
//! - [`basis`]: polynomial / B-spline series expansions.
//! - [`solvers`]: weighted least squares, quantile regression, and binary
//!   link (logit/probit) regression.
//! - [`bounds`]: band construction for interval outcomes, interval
//!   regressors, distribution regression, sample selection, instrument
//!   intersection, and treatment-effect combination.
//! - [`support`]: the support-function surface, coefficient projections,
//!   closed-form slope bounds, 2-d set reconstruction, and a brute-force
//!   enumeration oracle.
//! - [`inference`]: the bootstrap ensemble, pointwise confidence intervals,
//!   uniform bands, functional statistics, and sign tests.
//! - [`mc`]: synthetic data generators with analytically known identified
//!   sets, plus coverage experiments.
//! - [`pipeline`]: config-driven orchestration shared by the CLI, the
//!   bootstrap, and the Monte Carlo harness.

pub mod basis;
pub mod bounds;
pub mod dataset;
pub mod error;
pub mod export;
pub mod inference;
pub mod mc;
pub mod pipeline;
pub mod solvers;
pub mod support;
pub mod util;

pub use error::{Error, Result};
