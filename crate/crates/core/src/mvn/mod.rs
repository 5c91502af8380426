//! Multivariate standard normal probabilities.

mod bvn;
mod corr;
pub mod dual;
mod ghk;
mod normal;

pub use bvn::{bvn_cdf, bvn_pdf};
pub(crate) use bvn::{bvn_cdf_unchecked, bvn_pdf_unchecked};
pub use corr::{project_to_pd, CorrelationMatrix, Projection, MAX_DIM, PD_EPS};
pub use ghk::{
    mix_seed, mvn_cdf_drho, mvn_cdf_ghk, mvn_rectangle, orthant_with_config, uniform_points,
    GhkConfig, GhkEstimate, OrthantQuery, Sequence,
};
pub(crate) use ghk::cholesky_generic;
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
