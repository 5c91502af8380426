use log::warn;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::probit::{probit_fit, ProbitFit};
use crate::mvn::std_normal_cdf;
use crate::{Error, Result};

/// One probit of 1(Y ≤ c) per cutoff c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdrFit {
    pub cutoffs: Vec<f64>,
    /// `None` where the cutoff did not split the sample.
    pub fits: Vec<Option<ProbitFit>>,
    pub skipped: Vec<usize>,
}

impl UdrFit {
    /// Fitted conditional CDF at the retained cutoffs, monotonized by sorting.
    pub fn fitted_cdf(&self, row: &[f64]) -> Vec<(f64, f64)> {
        let (cuts, mut vals): (Vec<f64>, Vec<f64>) = self
            .cutoffs
            .iter()
            .zip(&self.fits)
            .filter_map(|(&c, f)| f.as_ref().map(|f| (c, std_normal_cdf(f.index(row)))))
            .unzip();
        rearrange(&mut vals);
        cuts.into_iter().zip(vals).collect()
    }
}

/// Sorts CDF values taken along an increasing grid, the rearrangement that
/// turns any fitted curve into a monotone one.
pub fn rearrange(values: &mut [f64]) {
    values.sort_by(f64::total_cmp);
}

pub fn udr_fit(wages: &[f64], design: &Design, cutoffs: &[f64], weights: Option<&[f64]>) -> Result<UdrFit> {
    if wages.len() != design.nrows() {
        return Err(Error::Estimation("wages and design differ in length".into()));
    }
    let mut fits = Vec::with_capacity(cutoffs.len());
    let mut skipped = Vec::new();
    for (k, &c) in cutoffs.iter().enumerate() {
        let ind: Vec<bool> = wages.iter().map(|&y| y <= c).collect();
        let ones = ind
            .iter()
            .zip(0..)
            .filter(|(&d, i)| d && weights.is_none_or(|w| w[*i] > 0.0))
            .count();
        let total = weights.map_or(ind.len(), |w| w.iter().filter(|&&v| v > 0.0).count());
        if ones == 0 || ones == total {
            warn!("cutoff {c} does not split the sample; skipped");
            skipped.push(k);
            fits.push(None);
            continue;
        }
        fits.push(Some(probit_fit(&ind, design, weights)?));
    }
    Ok(UdrFit { cutoffs: cutoffs.to_vec(), fits, skipped })
}
