use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One couple. Wages are observed exactly when both spouses work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub d_w: bool,
    pub d_h: bool,
    pub y_w: Option<f64>,
    pub y_h: Option<f64>,
    /// Wage-index design row; its columns are the leading columns of `z_row`.
    pub x_row: Vec<f64>,
    /// Participation-index design row.
    pub z_row: Vec<f64>,
    pub weight: f64,
}

impl Household {
    pub fn both_work(&self) -> bool {
        self.d_w && self.d_h
    }

    pub fn validate(&self) -> Result<()> {
        let has = (self.y_w.is_some(), self.y_h.is_some());
        if self.both_work() && has != (true, true) {
            return Err(Error::Spec("working couple with a missing wage".into()));
        }
        if !self.both_work() && has != (false, false) {
            return Err(Error::Spec("wage recorded for a couple that does not both work".into()));
        }
        if let (Some(a), Some(b)) = (self.y_w, self.y_h) {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Spec(format!("wages must be positive and finite, got ({a}, {b})")));
            }
        }
        if self.x_row.len() > self.z_row.len() || self.x_row.iter().zip(&self.z_row).any(|(a, b)| a != b) {
            return Err(Error::Spec("wage covariates must be the leading participation covariates".into()));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Spec(format!("invalid weight {}", self.weight)));
        }
        Ok(())
    }
}

pub fn validate_households(data: &[Household]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(Error::Spec("no households".into()));
    };
    let (kx, kz) = (first.x_row.len(), first.z_row.len());
    for (i, h) in data.iter().enumerate() {
        h.validate().map_err(|e| Error::Spec(format!("household {i}: {e}")))?;
        if h.x_row.len() != kx || h.z_row.len() != kz {
            return Err(Error::Spec(format!("household {i}: design row length differs")));
        }
    }
    Ok(())
}
