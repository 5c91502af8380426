//! Sequential decomposition of the change in a distributional statistic
//! between two periods.

use serde::{Deserialize, Serialize};

use super::engine::{CounterfactualSpec, CovariateWeights, Engine, EngineConfig, Spouse};
use super::inequality::{inequality_ratio, inequality_ratio_with, RatioConfig};
use crate::selection::{ModelGridFit, RhoName};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    /// A cell of the decile sorting table (0-based; row = wife).
    Cell { row: usize, col: usize },
    KendallTau,
    DiagSum,
    InequalityRatio { upper: f64, lower: f64 },
    Quantile { spouse: Spouse, tau: f64 },
}

impl Statistic {
    /// Parses `tau`, `diag`, `cell:R:C` (1-based), `ratio:U:L` or `q:w|h:T`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| Error::Spec(format!("bad number '{t}' in statistic '{s}'")));
        let idx = |t: &str| match t.parse::<usize>() {
            Ok(k) if (1..=10).contains(&k) => Ok(k - 1),
            _ => Err(Error::Spec(format!("decile index '{t}' must be 1..10"))),
        };
        match parts.as_slice() {
            ["tau"] => Ok(Self::KendallTau),
            ["diag"] => Ok(Self::DiagSum),
            ["cell", r, c] => Ok(Self::Cell { row: idx(r)?, col: idx(c)? }),
            ["ratio", u, l] => Ok(Self::InequalityRatio { upper: num(u)?, lower: num(l)? }),
            ["q", who, t] => {
                let spouse = match *who {
                    "w" | "wife" => Spouse::Wife,
                    "h" | "husband" => Spouse::Husband,
                    _ => return Err(Error::Spec(format!("unknown spouse '{who}'"))),
                };
                let tau = num(t)?;
                if !(0.0 < tau && tau < 1.0) {
                    return Err(Error::Spec(format!("quantile level {tau} outside (0, 1)")));
                }
                Ok(Self::Quantile { spouse, tau })
            }
            _ => Err(Error::Spec(format!("unknown statistic '{s}'"))),
        }
    }
}

/// Groups of inputs switched from the base to the target period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Composition,
    Selection,
    Structure,
    RhoYwYh,
}

impl Block {
    pub const DEFAULT_ORDER: [Block; 4] = [Block::Composition, Block::Selection, Block::Structure, Block::RhoYwYh];

    fn apply(self, spec: &mut CounterfactualSpec, target: usize) {
        match self {
            Block::Composition => spec.composition = target,
            Block::Selection => spec.selection = target,
            Block::Structure => spec.structure = target,
            Block::RhoYwYh => spec.rho_ywyh = Some(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub engine: EngineConfig,
    pub order: Vec<Block>,
    pub ratio: RatioConfig,
    /// Correlations held at zero along the whole path.
    pub zero: Vec<RhoName>,
    pub weights: CovariateWeights,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            order: Block::DEFAULT_ORDER.to_vec(),
            ratio: RatioConfig::default(),
            zero: Vec::new(),
            weights: CovariateWeights::Selected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub statistic: Statistic,
    pub base: String,
    pub target: String,
    pub base_value: f64,
    pub target_value: f64,
    pub total: f64,
    pub components: Vec<(Block, f64)>,
    /// Statistic after each switch, starting from the base.
    pub path: Vec<f64>,
}

impl Decomposition {
    pub fn component(&self, b: Block) -> Option<f64> {
        self.components.iter().find(|c| c.0 == b).map(|c| c.1)
    }
}

/// Values of several statistics under one counterfactual; the sorting table is
/// simulated once and shared.
pub fn evaluate(
    fits: &[ModelGridFit],
    spec: &CounterfactualSpec,
    stats: &[Statistic],
    cfg: &DecompositionConfig,
) -> Result<Vec<f64>> {
    let eng = Engine::new(fits, spec.clone(), cfg.engine.clone())?;
    let needs_table = stats.iter().any(|s| !matches!(s, Statistic::Quantile { .. }));
    let table = if needs_table { Some(eng.sorting_table()?.table) } else { None };
    let t = || table.as_ref().expect("table computed when needed");
    let mut out = Vec::with_capacity(stats.len());
    for &stat in stats {
        out.push(match stat {
            Statistic::Cell { row, col } => {
                *t().cells.get(row).and_then(|r| r.get(col)).ok_or_else(|| Error::Spec("cell out of range".into()))?
            }
            Statistic::KendallTau => t().kendall_tau_grouped,
            Statistic::DiagSum => t().diag_sum,
            Statistic::InequalityRatio { upper, lower } => {
                let rc = RatioConfig { upper, lower, ..cfg.ratio.clone() };
                match &table {
                    Some(tb) => inequality_ratio_with(&eng, tb, &rc)?.ratio,
                    None => inequality_ratio(&eng, &rc)?.ratio,
                }
            }
            Statistic::Quantile { spouse, tau } => eng.quantile(spouse, tau).value,
        });
    }
    Ok(out)
}

/// Switches the blocks from `base` to `target` one at a time in the configured
/// order; each component is the change in a statistic at its switch. Returns
/// one decomposition per statistic.
pub fn decompose(
    fits: &[ModelGridFit],
    base: usize,
    target: usize,
    stats: &[Statistic],
    cfg: &DecompositionConfig,
) -> Result<Vec<Decomposition>> {
    if base >= fits.len() || target >= fits.len() {
        return Err(Error::Spec(format!("periods {base} and {target} must be below {}", fits.len())));
    }
    let order = &cfg.order;
    if order.len() != 4 || Block::DEFAULT_ORDER.iter().any(|b| !order.contains(b)) {
        return Err(Error::Spec("decomposition order must list each of the four blocks once".into()));
    }
    let mut spec = CounterfactualSpec {
        rho_ywyh: Some(base),
        zero: cfg.zero.clone(),
        weights: cfg.weights,
        ..CounterfactualSpec::fitted(base)
    };
    let mut values = vec![evaluate(fits, &spec, stats, cfg)?];
    for b in order {
        b.apply(&mut spec, target);
        values.push(evaluate(fits, &spec, stats, cfg)?);
    }
    Ok(stats
        .iter()
        .enumerate()
        .map(|(k, &stat)| {
            let path: Vec<f64> = values.iter().map(|v| v[k]).collect();
            Decomposition {
                statistic: stat,
                base: fits[base].period.clone(),
                target: fits[target].period.clone(),
                base_value: path[0],
                target_value: path[4],
                total: path[4] - path[0],
                components: order.iter().zip(path.windows(2)).map(|(&b, w)| (b, w[1] - w[0])).collect(),
                path,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_statistics() {
        assert_eq!(Statistic::parse("tau").unwrap(), Statistic::KendallTau);
        assert_eq!(Statistic::parse("cell:1:10").unwrap(), Statistic::Cell { row: 0, col: 9 });
        assert_eq!(
            Statistic::parse("q:h:0.5").unwrap(),
            Statistic::Quantile { spouse: Spouse::Husband, tau: 0.5 }
        );
        assert!(Statistic::parse("cell:0:3").is_err());
        assert!(Statistic::parse("q:x:0.5").is_err());
    }
}
