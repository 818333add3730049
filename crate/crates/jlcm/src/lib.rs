//! Joint latent class models for multivariate longitudinal data and
//! competing risks.
//!
//! A population is modeled as a mixture of `G` latent classes. Within a
//! class, a scalar latent process with class-specific mean trajectory and
//! random effects drives several observed longitudinal markers through
//! marker-specific monotone link functions (linear, monotone spline,
//! beta-CDF, ordinal threshold, or bounded spline with floor/ceiling
//! masses), while cause-specific proportional hazards with class-specific
//! baselines drive the competing time-to-event outcomes. Class membership
//! follows a multinomial logistic model. The crate covers maximum-likelihood
//! estimation under left truncation (delayed entry), posterior
//! classification, dynamic cumulative-incidence prediction, a score test for
//! conditional independence between markers and events given the classes,
//! goodness-of-fit summaries, and a simulator that reproduces the estimator's
//! operating characteristics on synthetic cohorts.

pub mod artifact;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod hazards;
pub mod inference;
pub mod likelihood;
pub mod links;
pub mod model;
pub mod numerics;
pub mod simulator;
pub mod splines;
pub mod structural;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
