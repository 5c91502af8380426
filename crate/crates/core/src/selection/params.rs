use serde::{Deserialize, Serialize};

use crate::mvn::{project_to_pd, CorrelationMatrix, PD_EPS};
use crate::{Error, Result};

/// The six local correlations of (V_Dw, V_Dh, V_Yw, V_Yh).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoName {
    DwDh,
    DwYw,
    DhYh,
    DwYh,
    DhYw,
    YwYh,
}

impl RhoName {
    pub const ALL: [RhoName; 6] = [Self::DwDh, Self::DwYw, Self::DhYh, Self::DwYh, Self::DhYw, Self::YwYh];
    /// Correlations estimated in the second stage, in parameter-vector order.
    pub const SECOND_STAGE: [RhoName; 5] = [Self::DwYw, Self::DhYh, Self::DwYh, Self::DhYw, Self::YwYh];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DwDh => "rho_dwdh",
            Self::DwYw => "rho_dwyw",
            Self::DhYh => "rho_dhyh",
            Self::DwYh => "rho_dwyh",
            Self::DhYw => "rho_dhyw",
            Self::YwYh => "rho_ywyh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("rho_").unwrap_or(&t);
        Self::ALL
            .into_iter()
            .find(|r| &r.as_str()[4..] == t)
            .ok_or_else(|| Error::Spec(format!("unknown correlation '{s}'")))
    }

    /// Position in Σ for the order (V_Dw, V_Dh, V_Yw, V_Yh).
    pub fn position(self) -> (usize, usize) {
        match self {
            Self::DwDh => (0, 1),
            Self::DwYw => (0, 2),
            Self::DwYh => (0, 3),
            Self::DhYw => (1, 2),
            Self::DhYh => (1, 3),
            Self::YwYh => (2, 3),
        }
    }

    /// Whether the failure orientation (D = 1 when the latent index is
    /// negative) flips this correlation relative to the one used here.
    pub fn failure_sign(self) -> f64 {
        match self {
            Self::DwDh | Self::YwYh => 1.0,
            _ => -1.0,
        }
    }
}

/// The parameter block at one (y_w, y_h) grid cell.
///
/// All correlations are in the success orientation: D = 1 ⇔ V_D ≤ z'γ and
/// Y ≤ y ⇔ V_Y ≤ x'β(y). Use [`LocalParams::failure_orientation`] for the signs
/// of a model written with D = 1 ⇔ D* ≤ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    #[serde(with = "crate::serde_float::vec")]
    pub beta_w: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub beta_h: Vec<f64>,
    #[serde(with = "crate::serde_float")]
    pub rho_dwdh: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_dwyw: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_dhyh: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_dwyh: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_dhyw: f64,
    #[serde(with = "crate::serde_float")]
    pub rho_ywyh: f64,
    pub cell: (usize, usize),
}

impl LocalParams {
    pub fn independent(beta_w: Vec<f64>, beta_h: Vec<f64>, cell: (usize, usize)) -> Self {
        Self {
            beta_w,
            beta_h,
            rho_dwdh: 0.0,
            rho_dwyw: 0.0,
            rho_dhyh: 0.0,
            rho_dwyh: 0.0,
            rho_dhyw: 0.0,
            rho_ywyh: 0.0,
            cell,
        }
    }

    pub fn rho(&self, name: RhoName) -> f64 {
        match name {
            RhoName::DwDh => self.rho_dwdh,
            RhoName::DwYw => self.rho_dwyw,
            RhoName::DhYh => self.rho_dhyh,
            RhoName::DwYh => self.rho_dwyh,
            RhoName::DhYw => self.rho_dhyw,
            RhoName::YwYh => self.rho_ywyh,
        }
    }

    pub fn set_rho(&mut self, name: RhoName, v: f64) {
        *match name {
            RhoName::DwDh => &mut self.rho_dwdh,
            RhoName::DwYw => &mut self.rho_dwyw,
            RhoName::DhYh => &mut self.rho_dhyh,
            RhoName::DwYh => &mut self.rho_dwyh,
            RhoName::DhYw => &mut self.rho_dhyw,
            RhoName::YwYh => &mut self.rho_ywyh,
        } = v;
    }

    pub fn sigma_rows(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for r in RhoName::ALL {
            let (i, j) = r.position();
            m[i][j] = self.rho(r);
            m[j][i] = self.rho(r);
        }
        m
    }

    /// (β_w, β_h, the six correlations in [`RhoName::ALL`] order).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.beta_w.iter().chain(&self.beta_h).copied().collect();
        v.extend(RhoName::ALL.map(|r| self.rho(r)));
        v
    }

    pub fn from_vec(v: &[f64], kx: usize, cell: (usize, usize)) -> Self {
        let mut p = Self::independent(v[..kx].to_vec(), v[kx..2 * kx].to_vec(), cell);
        for (k, r) in RhoName::ALL.into_iter().enumerate() {
            p.set_rho(r, v[2 * kx + k]);
        }
        p
    }

    /// Labels matching [`LocalParams::to_vec`].
    pub fn labels(x_names: &[String]) -> Vec<String> {
        let mut v: Vec<String> = x_names.iter().map(|n| format!("beta_w[{n}]")).collect();
        v.extend(x_names.iter().map(|n| format!("beta_h[{n}]")));
        v.extend(RhoName::ALL.map(|r| r.as_str().to_string()));
        v
    }

    /// Same block with the selection–wage correlations in the failure orientation (D = 1 ⇔ D* ≤ 0).
    pub fn failure_orientation(&self) -> Self {
        let mut out = self.clone();
        for r in RhoName::ALL {
            out.set_rho(r, r.failure_sign() * self.rho(r));
        }
        out
    }
}

/// Σ(0,0,y_w,y_h) with a flag telling whether PD projection moved it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledSigma {
    pub corr: CorrelationMatrix,
    pub projected: bool,
}

pub fn assemble_sigma(p: &LocalParams) -> Result<AssembledSigma> {
    let rows = p.sigma_rows();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite local correlation".into()));
    }
    if let Ok(corr) = CorrelationMatrix::from_rows(&rows) {
        return Ok(AssembledSigma { corr, projected: false });
    }
    let proj = project_to_pd(&rows, PD_EPS)?;
    Ok(AssembledSigma { projected: proj.changed(), corr: proj.matrix })
}
