//! Probit, bivariate probit and (bivariate) distribution regression.

mod bdr;
mod biprobit;
mod design;
mod probit;
mod udr;

pub use bdr::{bdr_cell_fit, bdr_rho_fit, BdrCellFit, BdrRhoFit};
pub use biprobit::{biprobit_fit, biprobit_fit_with, BiprobitFit, BiprobitOptions};
pub use design::{sample_quantile, Design, DesignSpec, ThresholdGrid, Transform};
pub use probit::{probit_fit, probit_fit_with, ProbitFit, ProbitOptions};
pub use udr::{rearrange, udr_fit, UdrFit};
