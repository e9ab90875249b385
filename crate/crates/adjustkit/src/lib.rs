//! Covariate adjustment for individually-randomised trials.
//!
//! Three broad adjustment approaches (direct adjustment, standardisation and
//! inverse-probability-of-treatment weighting) with explicit estimand
//! targeting, delta-method / sandwich / bootstrap variance estimation,
//! missing-data handling (mean imputation, missing indicator, IPMW, multiple
//! imputation by arm with Rubin's rules), randomisation schemes including
//! Pocock–Simon minimisation, and built-in deterministic demonstration
//! scenarios.

pub mod config;
pub mod design;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod missing;
pub mod scenarios;
pub mod trialdata;

pub use error::{Error, ErrorClass, Result};
