//! The tetravariate selection model: participation of both spouses and their
//! wages, estimated in two steps over a grid of wage cutoffs.

mod bootstrap;
mod estimate;
mod household;
mod identification;
mod params;

pub use bootstrap::{attach_bootstrap, bootstrap, bootstrap_first_stage, bootstrap_summary, resample_indices, CellSummary};
pub use estimate::{
    cell_loglik_at, first_stage, fit_grid, grid_from_households, quadrant_probabilities, second_stage_cell,
    CellFit, Composition, ModelGridFit, Replicate, SecondStageConfig,
};
pub(crate) use estimate::{prefix, row_seed, Prefix};
pub use household::{validate_households, Household};
pub use identification::{identification_check, IdentificationReport, Recovered};
pub use params::{assemble_sigma, AssembledSigma, LocalParams, RhoName};
