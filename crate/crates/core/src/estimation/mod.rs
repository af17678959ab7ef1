//! EKF over (x, y, heading) with Mahalanobis gating, GPS and lidar-pose
//! updates, scan alignment and filter health.

mod align;
mod filter;
mod gate;

pub use align::{align_scan, history_gate, rigid_fit, AlignConfig, AlignmentResult};
pub use filter::{
    euler_error_bound, health_assess, motion_jacobian, predict, propagate, reset, update_gps, update_lidar,
    FilterMode, FilterState, Health, HealthConfig, LidarPoseNoise, LossRecovery, ProcessNoise,
};
pub use gate::{gate, GateBound, GateDecision};
