//! Sorting tables, counterfactual distributions, decompositions and
//! inequality ratios.

mod decompose;
mod engine;
mod inequality;
mod sorting;

pub use decompose::{decompose, evaluate, Block, Decomposition, DecompositionConfig, Statistic};
pub use engine::{
    fitted_sorting_table, model_sorting_measure, CounterfactualSpec, CounterfactualTable, CovariateWeights, Engine,
    EngineConfig, MarginalCurve, QuantileResult, Spouse,
};
pub use inequality::{inequality_ratio, inequality_ratio_with, kde, sample_inequality_ratio, InequalityRatio, RatioConfig};
pub use sorting::{
    decile_index, empirical_sorting_table, kendall_tau, kendall_tau_grouped, midranks, SortingTable, TableSource,
    DECILES,
};
