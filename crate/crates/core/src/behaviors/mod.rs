//! Sensor-selection behaviors for the localiser: the leaves, the ladder and
//! the tree builders that turn a list of sensors into a reactive policy.

mod ladder;
mod leaves;
mod localiser;
mod tree;

use serde::{Deserialize, Serialize};

pub use ladder::{ladder_step, LadderRules, LadderState, LadderStep};
pub use leaves::{register_leaves, topics};
pub use localiser::{EventKind, Localiser, LocaliserConfig, ModuleIds, NodeSlot, TransitionEvent};
pub use tree::{
    build_experiment_tree, build_sensor_selector, build_single_sensor_subtree, index_tree, instantiate_localiser_tree,
    SensorSubtreeSpec,
};

/// Tunables of the selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub ladder_descend_n: usize,
    pub ladder_improve_m: usize,
    /// A connected sensor with no accepted update for this long has failed.
    pub stale_secs: f64,
    /// Consecutive consistent fixes needed before GPS may drive the main filter.
    pub gps_consistency_fixes: usize,
    /// Maximum age of the latest fix for GPS initialisation.
    pub gps_fresh_secs: f64,
    /// Heading disagreement that lets a healthier backup reset the main filter.
    pub cross_reset_heading_deg: f64,
    /// Consecutive ticks a GPS-availability change must persist before the tree is edited.
    pub context_hysteresis_ticks: u32,
    /// Diagonal covariance used by operator resets: x, y (m²), heading (rad²).
    pub manual_reset_cov: [f64; 3],
    /// Pin the GPS ladder at 2σ inside cells mapped as noisy.
    pub hold_ladder_in_noisy: bool,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            ladder_descend_n: 2,
            ladder_improve_m: 2,
            stale_secs: 3.0,
            gps_consistency_fixes: 3,
            gps_fresh_secs: 1.5,
            cross_reset_heading_deg: 10.0,
            context_hysteresis_ticks: 3,
            manual_reset_cov: [1.0, 1.0, 0.01],
            hold_ladder_in_noisy: true,
        }
    }
}

impl BehaviorConfig {
    pub fn ladder_rules(&self) -> LadderRules {
        LadderRules {
            descend_after: self.ladder_descend_n,
            improve_after: self.ladder_improve_m,
        }
    }
}
