use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::align::AlignmentResult;
use super::gate::{gate, GateBound};
use crate::error::EstimationError;
use crate::pipeline::{FilterId, SensorKind, UpdateOutcome, UpdateStats};
use crate::types::{wrap_angle, Covariance3, GpsFix, Pose2D, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterMode {
    LidarDr,
    GpsDr,
    DrOnly,
    Uninitialized,
}

impl FilterMode {
    pub fn label(&self) -> &'static str {
        match self {
            FilterMode::LidarDr => "LIDAR_DR",
            FilterMode::GpsDr => "GPS_DR",
            FilterMode::DrOnly => "DR_ONLY",
            FilterMode::Uninitialized => "UNINITIALIZED",
        }
    }
}

/// Ordered LOST < DEGRADED < GOOD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Health {
    Lost,
    Degraded,
    Good,
}

/// Process noise growth rates; Q(dt) = diag(pos, pos, heading) · dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    /// m²/s
    pub position_rate: f64,
    /// rad²/s
    pub heading_rate: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise {
            position_rate: 0.01,
            heading_rate: 1e-4,
        }
    }
}

impl ProcessNoise {
    pub fn q(&self, dt: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.position_rate, self.position_rate, self.heading_rate)) * dt
    }
}

/// Thresholds for [`health_assess`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthConfig {
    /// Seconds within which an accepted update counts as fresh.
    pub window_secs: f64,
    /// Max position-covariance trace (m²) for GOOD.
    pub trace_good: f64,
    /// Position-covariance trace (m²) above which the filter is LOST.
    pub trace_lost: f64,
    /// Dead-reckoned distance (m) since the last accepted update above which the filter is LOST.
    pub max_dr_distance: f64,
}

impl Default for HealthConfig {
    fn default() -> Self {
        HealthConfig {
            window_secs: 5.0,
            trace_good: 4.0,
            trace_lost: 100.0,
            max_dr_distance: 200.0,
        }
    }
}

/// Lidar pose observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoseNoise {
    pub sigma_xy: f64,
    pub sigma_heading: f64,
}

impl Default for LidarPoseNoise {
    fn default() -> Self {
        LidarPoseNoise {
            sigma_xy: 0.25,
            sigma_heading: 1f64.to_radians(),
        }
    }
}

impl LidarPoseNoise {
    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.sigma_xy.powi(2),
            self.sigma_xy.powi(2),
            self.sigma_heading.powi(2),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub pose: Pose2D,
    pub cov: Covariance3,
    pub last_update_time: Timestamp,
    pub mode: FilterMode,
    pub health: Health,
    /// Set by a reset; caps health at DEGRADED until the next accepted update.
    pub reset_grace: bool,
}

impl FilterState {
    pub fn uninitialized() -> Self {
        FilterState {
            pose: Pose2D::origin(),
            cov: Covariance3::diagonal(1e6, 1e6, 1e2),
            last_update_time: Timestamp::ZERO,
            mode: FilterMode::Uninitialized,
            health: Health::Lost,
            reset_grace: false,
        }
    }

    pub fn initialized(pose: Pose2D, cov: Covariance3, at: Timestamp, mode: FilterMode) -> Self {
        FilterState {
            pose,
            cov: cov.symmetrized(),
            last_update_time: at,
            mode,
            health: Health::Degraded,
            reset_grace: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.mode != FilterMode::Uninitialized
    }

    fn mean(&self) -> Vector3<f64> {
        Vector3::new(self.pose.x, self.pose.y, self.pose.heading)
    }
}

/// Position jump caused by a reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecovery {
    pub timestamp: Timestamp,
    pub from: Pose2D,
    pub to: Pose2D,
    pub jump_distance: f64,
}

/// Unicycle propagation (single Euler step).
pub fn propagate(pose: &Pose2D, v: f64, omega: f64, dt: f64) -> Pose2D {
    let (s, c) = pose.heading.sin_cos();
    Pose2D::new(pose.x + v * dt * c, pose.y + v * dt * s, pose.heading + omega * dt)
}

/// Jacobian of [`propagate`] with respect to (x, y, heading).
pub fn motion_jacobian(pose: &Pose2D, v: f64, dt: f64) -> Matrix3<f64> {
    let (s, c) = pose.heading.sin_cos();
    Matrix3::new(1.0, 0.0, -v * dt * s, 0.0, 1.0, v * dt * c, 0.0, 0.0, 1.0)
}

/// Upper bound on the Euler position error of one step for constant v, ω:
/// |Euler − exact| ≤ |v|·|ω|·dt²/2.
pub fn euler_error_bound(v: f64, omega: f64, dt: f64) -> f64 {
    v.abs() * omega.abs() * dt * dt / 2.0
}

pub fn predict(
    state: &FilterState,
    v: f64,
    omega: f64,
    dt: f64,
    q: &ProcessNoise,
) -> Result<FilterState, EstimationError> {
    if !state.is_initialized() {
        return Err(EstimationError::Uninitialized);
    }
    if dt < 0.0 || !dt.is_finite() {
        return Err(EstimationError::NegativeDt(dt));
    }
    let f = motion_jacobian(&state.pose, v, dt);
    let cov = f * state.cov.0 * f.transpose() + q.q(dt);
    Ok(FilterState {
        pose: propagate(&state.pose, v, omega, dt),
        cov: Covariance3(cov).symmetrized(),
        ..*state
    })
}

fn joseph<const M: usize>(
    p: &Matrix3<f64>,
    k: &nalgebra::SMatrix<f64, 3, M>,
    h: &nalgebra::SMatrix<f64, M, 3>,
    r: &nalgebra::SMatrix<f64, M, M>,
) -> Matrix3<f64> {
    let i_kh = Matrix3::identity() - k * h;
    i_kh * p * i_kh.transpose() + k * r * k.transpose()
}

/// GPS position update with H = [I₂ 0] and R = fix covariance.
pub fn update_gps(
    state: &FilterState,
    fix: &GpsFix,
    at: Timestamp,
    bound: GateBound,
    filter: FilterId,
) -> (FilterState, UpdateStats) {
    if !fix.has_fix() {
        let stats = UpdateStats::without_distance(at, SensorKind::Gps, filter, UpdateOutcome::NoFix, bound);
        return (*state, stats);
    }
    if !state.is_initialized() {
        return (*state, UpdateStats::not_converged(at, SensorKind::Gps, filter, bound));
    }
    let h = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let p = state.cov.0;
    let r = fix.cov_matrix();
    let nu: Vector2<f64> = fix.position_vec() - state.pose.position();
    let s: Matrix2<f64> = h * p * h.transpose() + r;
    let decision = match gate(&nu, &s, bound) {
        Ok(d) => d,
        Err(_) => return (*state, UpdateStats::not_converged(at, SensorKind::Gps, filter, bound)),
    };
    let mut stats = UpdateStats {
        timestamp: at,
        sensor: SensorKind::Gps,
        filter,
        innovation: vec![nu.x, nu.y],
        mahalanobis: Some(decision.mahalanobis),
        outcome: UpdateOutcome::Rejected,
        bound,
        history_gate: None,
        rms_residual: None,
        correction: None,
    };
    if !decision.accept {
        return (*state, stats);
    }
    let s_inv = match s.try_inverse() {
        Some(i) => i,
        None => return (*state, UpdateStats::not_converged(at, SensorKind::Gps, filter, bound)),
    };
    let k = p * h.transpose() * s_inv;
    let dx = k * nu;
    let mean = state.mean() + dx;
    stats.outcome = UpdateOutcome::Accepted;
    stats.correction = Some(dx.fixed_rows::<2>(0).norm());
    let next = FilterState {
        pose: Pose2D::new(mean.x, mean.y, mean.z),
        cov: Covariance3(joseph(&p, &k, &h, &r)).symmetrized(),
        last_update_time: at,
        reset_grace: false,
        ..*state
    };
    (next, stats)
}

/// Lidar update treating the alignment pose as a full-pose observation (H = I₃).
pub fn update_lidar(
    state: &FilterState,
    result: &AlignmentResult,
    at: Timestamp,
    bound: GateBound,
    history_gate_passed: bool,
    noise: &LidarPoseNoise,
    filter: FilterId,
) -> (FilterState, UpdateStats) {
    if !result.converged || !state.is_initialized() {
        let mut stats = UpdateStats::not_converged(at, SensorKind::Lidar, filter, bound);
        stats.rms_residual = Some(result.rms_residual);
        return (*state, stats);
    }
    let p = state.cov.0;
    let r = noise.r();
    let nu = Vector3::new(
        result.pose.x - state.pose.x,
        result.pose.y - state.pose.y,
        wrap_angle(result.pose.heading - state.pose.heading),
    );
    let s = p + r;
    let decision = match gate(&nu, &s, bound) {
        Ok(d) => d,
        Err(_) => return (*state, UpdateStats::not_converged(at, SensorKind::Lidar, filter, bound)),
    };
    let mut stats = UpdateStats {
        timestamp: at,
        sensor: SensorKind::Lidar,
        filter,
        innovation: vec![nu.x, nu.y, nu.z],
        mahalanobis: Some(decision.mahalanobis),
        outcome: UpdateOutcome::Rejected,
        bound,
        history_gate: Some(history_gate_passed),
        rms_residual: Some(result.rms_residual),
        correction: None,
    };
    if !history_gate_passed || !decision.accept {
        return (*state, stats);
    }
    let s_inv = match s.try_inverse() {
        Some(i) => i,
        None => return (*state, UpdateStats::not_converged(at, SensorKind::Lidar, filter, bound)),
    };
    let k = p * s_inv;
    let dx = k * nu;
    let mean = state.mean() + dx;
    stats.outcome = UpdateOutcome::Accepted;
    stats.correction = Some(dx.fixed_rows::<2>(0).norm());
    let h = Matrix3::identity();
    let next = FilterState {
        pose: Pose2D::new(mean.x, mean.y, mean.z),
        cov: Covariance3(joseph(&p, &k, &h, &r)).symmetrized(),
        last_update_time: at,
        reset_grace: false,
        ..*state
    };
    (next, stats)
}

/// Overwrites the estimate. Health drops to DEGRADED until the next accepted update.
pub fn reset(state: &FilterState, target: Pose2D, target_cov: Covariance3, at: Timestamp) -> (FilterState, LossRecovery) {
    let event = LossRecovery {
        timestamp: at,
        from: state.pose,
        to: target,
        jump_distance: state.pose.distance_to(&target),
    };
    let mode = if state.is_initialized() {
        state.mode
    } else {
        FilterMode::DrOnly
    };
    let next = FilterState {
        pose: target,
        cov: target_cov.symmetrized(),
        last_update_time: at,
        mode,
        health: Health::Degraded,
        reset_grace: true,
    };
    (next, event)
}

/// GOOD / DEGRADED / LOST from update freshness, covariance size and dead-reckoned distance.
pub fn health_assess(
    state: &FilterState,
    recent: &[UpdateStats],
    now: Timestamp,
    dr_distance_since_update: f64,
    cfg: &HealthConfig,
) -> Health {
    if !state.is_initialized() {
        return Health::Lost;
    }
    let trace = state.cov.position_trace();
    if dr_distance_since_update > cfg.max_dr_distance || trace > cfg.trace_lost {
        return Health::Lost;
    }
    let fresh = recent.iter().any(|s| {
        s.outcome == UpdateOutcome::Accepted && now.secs_since(s.timestamp) <= cfg.window_secs
    });
    if fresh && trace <= cfg.trace_good && !state.reset_grace {
        Health::Good
    } else {
        Health::Degraded
    }
}
