use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimate::{first_stage, fit_grid, ModelGridFit, Replicate};
use super::household::Household;
use super::params::LocalParams;
use crate::distreg::BiprobitFit;
use crate::mvn::mix_seed;
use crate::{Error, Result};

/// Indices of a household resample with replacement for replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn resample(data: &[Household], idx: &[usize]) -> Vec<Household> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

/// Household bootstrap of the full two-step pipeline at the cutoffs of `fit`.
///
/// Each replicate redraws the households, refits the first stage and every
/// cell. Cutoffs are held at the original sample's so that replicate
/// parameters refer to the same wage levels. Failures are counted, not fatal.
pub fn bootstrap(data: &[Household], fit: &ModelGridFit, replicates: usize, seed: u64) -> Result<(Vec<Replicate>, usize)> {
    if replicates < 2 {
        return Err(Error::Spec("the bootstrap needs at least two replicates".into()));
    }
    let mut out = Vec::with_capacity(replicates);
    let mut failures = 0;
    for b in 0..replicates {
        let sample = resample(data, &resample_indices(data.len(), seed, b));
        let mut cfg = fit.config.clone();
        cfg.ghk.seed = mix_seed(cfg.ghk.seed, b as u64 + 1);
        cfg.compute_se = false;
        match fit_grid(&sample, &fit.thresholds, &cfg) {
            Ok(f) => out.push(Replicate {
                flagged: f.cells.iter().map(|c| c.flagged()).collect(),
                cells: f.cells.into_iter().map(|c| c.params).collect(),
                first_stage: f.first_stage,
            }),
            Err(e) => {
                warn!("bootstrap replicate {b} failed: {e}");
                failures += 1;
            }
        }
        info!("bootstrap replicate {}/{replicates}", b + 1);
    }
    Ok((out, failures))
}

/// Runs [`bootstrap`] and stores the replicates in the fit.
pub fn attach_bootstrap(data: &[Household], fit: &mut ModelGridFit, replicates: usize, seed: u64) -> Result<()> {
    let (reps, failures) = bootstrap(data, fit, replicates, seed)?;
    fit.bootstrap = reps;
    fit.bootstrap_failures = failures;
    Ok(())
}

/// First-stage-only household bootstrap.
pub fn bootstrap_first_stage(data: &[Household], replicates: usize, seed: u64) -> Vec<BiprobitFit> {
    (0..replicates)
        .filter_map(|b| first_stage(&resample(data, &resample_indices(data.len(), seed, b))).ok())
        .collect()
}

/// Per-cell bootstrap standard deviations and percentile intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: (usize, usize),
    pub sd: LocalParams,
    pub lower: LocalParams,
    pub upper: LocalParams,
    /// Replicates in which the cell was usable.
    pub used: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    crate::distreg::sample_quantile(sorted, q)
}

/// Summaries of the stored replicates with a central `level` percentile interval.
pub fn bootstrap_summary(fit: &ModelGridFit, level: f64) -> Vec<CellSummary> {
    let kx = fit.kx();
    (0..fit.cells.len())
        .map(|c| {
            let cell = fit.cells[c].params.cell;
            let vals: Vec<Vec<f64>> = fit
                .bootstrap
                .iter()
                .filter(|r| !r.flagged[c])
                .map(|r| {
                    let mut v = r.cells[c].to_vec();
                    // the first-stage correlation is refitted per replicate
                    v[2 * kx] = r.first_stage.rho;
                    v
                })
                .collect();
            let np = 2 * kx + 6;
            let mut sd = vec![f64::NAN; np];
            let mut lo = vec![f64::NAN; np];
            let mut hi = vec![f64::NAN; np];
            if vals.len() >= 2 {
                for k in 0..np {
                    let mut col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
                    let m = col.iter().sum::<f64>() / col.len() as f64;
                    sd[k] = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
                    col.sort_by(f64::total_cmp);
                    lo[k] = percentile(&col, (1.0 - level) / 2.0);
                    hi[k] = percentile(&col, (1.0 + level) / 2.0);
                }
            }
            CellSummary {
                cell,
                sd: LocalParams::from_vec(&sd, kx, cell),
                lower: LocalParams::from_vec(&lo, kx, cell),
                upper: LocalParams::from_vec(&hi, kx, cell),
                used: vals.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resamples_are_reproducible_and_distinct() {
        let a = resample_indices(100, 9, 0);
        assert_eq!(a, resample_indices(100, 9, 0));
        assert_ne!(a, resample_indices(100, 9, 1));
        assert!(a.iter().all(|&i| i < 100));
    }
}
