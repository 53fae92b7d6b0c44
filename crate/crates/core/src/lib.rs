//! Markov-switching asymmetric composite multiplicative error models for
//! realized volatility, and classification of policy-announcement days into
//! Plank / Squat / Jump groups from smoothed regime probabilities.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: CSV ingestion, announcement calendars, the policy-proxy
//!   forecaster.
//! - [`model`]: parameter types, Gamma log-density, the base volatility
//!   recursion and the single-regime (AMEM / AMEMX / ACM) filter.
//! - [`regime`]: Hamilton filter with Kim collapsing, Kim smoother, the exact
//!   path-enumeration likelihood, ergodic distribution and durations.
//! - [`simulate`]: MS-ACM simulator used by the Monte Carlo checks.
//! - [`estimation`]: parameter transforms, Nelder-Mead + BFGS quasi-maximum
//!   likelihood with multi-start, sandwich standard errors, information
//!   criteria.
//! - [`classify`]: SP-level, SP-diff and exact 1-d k-means classifiers, the
//!   uncertainty index and the adjusted Rand index.
//! - [`diagnostics`]: residuals, Ljung-Box, Kolmogorov-Smirnov against the
//!   ergodic Gamma mixture, lag-1 cross-correlations.
//! - [`report`] and [`cli`]: file formats and the command-line pipeline.

pub mod classify;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod model;
pub mod regime;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
