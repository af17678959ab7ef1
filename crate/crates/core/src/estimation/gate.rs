use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;

/// Outlier rejection bound, ordered by permissiveness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateBound {
    TwoSigma,
    ThreeSigma,
    All,
}

impl GateBound {
    pub const LADDER: [GateBound; 3] = [GateBound::TwoSigma, GateBound::ThreeSigma, GateBound::All];

    /// Mahalanobis threshold, `None` for ALL.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            GateBound::TwoSigma => Some(2.0),
            GateBound::ThreeSigma => Some(3.0),
            GateBound::All => None,
        }
    }

    pub fn admits(&self, mahalanobis: f64) -> bool {
        self.threshold().is_none_or(|t| mahalanobis <= t)
    }

    pub fn rung(&self) -> usize {
        match self {
            GateBound::TwoSigma => 0,
            GateBound::ThreeSigma => 1,
            GateBound::All => 2,
        }
    }

    pub fn from_rung(rung: usize) -> GateBound {
        Self::LADDER[rung.min(2)]
    }

    pub fn label(&self) -> &'static str {
        match self {
            GateBound::TwoSigma => "2sigma",
            GateBound::ThreeSigma => "3sigma",
            GateBound::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accept: bool,
    pub mahalanobis: f64,
}

/// Mahalanobis gate: d = sqrt(νᵀ S⁻¹ ν), accepted iff the bound admits d.
pub fn gate<const D: usize>(
    innovation: &SVector<f64, D>,
    s: &SMatrix<f64, D, D>,
    bound: GateBound,
) -> Result<GateDecision, EstimationError> {
    let sym = (s + s.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or(EstimationError::Singular)?;
    let whitened = chol
        .l()
        .solve_lower_triangular(innovation)
        .ok_or(EstimationError::Singular)?;
    let d = whitened.norm();
    if !d.is_finite() {
        return Err(EstimationError::Singular);
    }
    Ok(GateDecision {
        accept: bound.admits(d),
        mahalanobis: d,
    })
}
