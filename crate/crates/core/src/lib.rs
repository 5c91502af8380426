//! Distribution regression with bivariate sample selection.
//!
//! The crate estimates local Gaussian representations of the joint wage
//! distribution of couples when wages are only observed for couples in which
//! both partners work, and evaluates sorting tables, counterfactual quantiles,
//! decompositions and inequality ratios from the fitted models.
//!
//! Modules, bottom-up:
//!
//! * [`mvn`]: univariate/bivariate normal CDFs, the GHK orthant simulator and
//!   correlation-matrix hygiene.
//! * [`distreg`]: probit, bivariate probit, univariate and bivariate
//!   distribution regression.
//! * [`selection`]: the tetravariate selection model, two-step estimation over a
//!   threshold grid, bootstrap and the constructive identification replay.
//! * [`counterfactual`]: sorting tables, Kendall's tau, counterfactual
//!   distributions and quantiles, decompositions and inequality ratios.
//! * [`datagen`]: the synthetic data generating process and crude Monte Carlo
//!   oracles.

pub mod counterfactual;
pub mod datagen;
pub mod distreg;
pub mod error;
pub mod mvn;
pub mod optim;
mod serde_float;
pub mod selection;

pub use error::{Error, Result};
