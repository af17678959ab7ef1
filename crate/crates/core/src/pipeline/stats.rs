use serde::{Deserialize, Serialize};

use crate::estimation::GateBound;
use crate::types::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensorKind {
    Gps,
    Lidar,
}

/// Which estimator produced a record. `Audit` records are GPS fixes checked
/// against a trusted lidar-localised main filter without being fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterId {
    Main,
    Backup,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UpdateOutcome {
    Accepted,
    Rejected,
    NotConverged,
    NoFix,
}

/// Per-update statistics published by the localisation kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub timestamp: Timestamp,
    pub sensor: SensorKind,
    pub filter: FilterId,
    /// (x, y) for GPS, (x, y, heading) for lidar; empty when nothing was compared.
    pub innovation: Vec<f64>,
    /// Present iff the outcome is ACCEPTED or REJECTED.
    pub mahalanobis: Option<f64>,
    pub outcome: UpdateOutcome,
    /// Gate bound in force when the update was processed.
    pub bound: GateBound,
    /// Lidar only: whether the historical-heading check passed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_gate: Option<bool>,
    /// Lidar only: alignment residual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_residual: Option<f64>,
    /// ACCEPTED only: position shift applied to the estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<f64>,
}

impl UpdateStats {
    pub fn without_distance(
        timestamp: Timestamp,
        sensor: SensorKind,
        filter: FilterId,
        outcome: UpdateOutcome,
        bound: GateBound,
    ) -> Self {
        debug_assert!(matches!(outcome, UpdateOutcome::NotConverged | UpdateOutcome::NoFix));
        UpdateStats {
            timestamp,
            sensor,
            filter,
            innovation: Vec::new(),
            mahalanobis: None,
            outcome,
            bound,
            history_gate: None,
            rms_residual: None,
            correction: None,
        }
    }

    pub fn not_converged(timestamp: Timestamp, sensor: SensorKind, filter: FilterId, bound: GateBound) -> Self {
        Self::without_distance(timestamp, sensor, filter, UpdateOutcome::NotConverged, bound)
    }

    pub fn is_decision(&self) -> bool {
        matches!(self.outcome, UpdateOutcome::Accepted | UpdateOutcome::Rejected)
    }

    /// Whether this measurement would have been rejected had `bound` been in force.
    /// `None` when no gate decision was made.
    pub fn rejected_at(&self, bound: GateBound) -> Option<bool> {
        let d = self.mahalanobis?;
        if self.history_gate == Some(false) {
            return Some(true);
        }
        Some(!bound.admits(d))
    }

    pub fn innovation_norm(&self) -> f64 {
        self.innovation.iter().take(2).map(|v| v * v).sum::<f64>().sqrt()
    }
}
