//! Geometric and measurement types shared by every layer of the localiser.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Wraps `angle` into (-π, π].
pub fn normalize_heading(angle: f64) -> Result<f64, CoreError> {
    if !angle.is_finite() {
        return Err(CoreError::NonFinite(angle));
    }
    Ok(wrap_angle(angle))
}

/// Infallible variant of [`normalize_heading`] for values already known to be finite.
pub(crate) fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Planar vehicle pose in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2D {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn origin() -> Self {
        Pose2D::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.heading.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Vehicle-frame point to map frame.
    pub fn transform_to_map(&self, local: Vector2<f64>) -> Vector2<f64> {
        self.rotation() * local + self.position()
    }

    /// Map-frame point to vehicle frame.
    pub fn transform_to_local(&self, map: Vector2<f64>) -> Vector2<f64> {
        self.rotation().transpose() * (map - self.position())
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.position() - other.position()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// Free-function form of [`Pose2D::transform_to_map`].
pub fn transform_to_map(pose: &Pose2D, local: Vector2<f64>) -> Vector2<f64> {
    pose.transform_to_map(local)
}

/// 3×3 covariance over (x, y, heading).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 3]; 3]", from = "[[f64; 3]; 3]")]
pub struct Covariance3(pub Matrix3<f64>);

impl Covariance3 {
    pub fn diagonal(xx: f64, yy: f64, hh: f64) -> Self {
        Covariance3(Matrix3::from_diagonal(&nalgebra::Vector3::new(xx, yy, hh)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn position_trace(&self) -> f64 {
        self.0[(0, 0)] + self.0[(1, 1)]
    }

    pub fn symmetrized(&self) -> Self {
        Covariance3((self.0 + self.0.transpose()) * 0.5)
    }

    /// Symmetric within 1e-9 relative and no eigenvalue below -1e-9.
    pub fn is_valid(&self) -> bool {
        let m = &self.0;
        if m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let scale = m.abs().max().max(1.0);
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-9 * scale {
            return false;
        }
        let eig = m.symmetric_eigenvalues();
        eig.iter().all(|&e| e >= -1e-9)
    }
}

impl From<Covariance3> for [[f64; 3]; 3] {
    fn from(c: Covariance3) -> Self {
        let m = c.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl From<[[f64; 3]; 3]> for Covariance3 {
    fn from(r: [[f64; 3]; 3]) -> Self {
        Covariance3(Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ))
    }
}

/// Simulation time in integer microseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000)
    }

    pub fn micros(&self) -> u64 {
        self.0
    }

    pub fn as_secs(&self) -> f64 {
        self.0 as f64 * 1e-6
    }

    /// Seconds from `earlier` to `self`, negative if `earlier` is later.
    pub fn secs_since(&self, earlier: Timestamp) -> f64 {
        (self.0 as i128 - earlier.0 as i128) as f64 * 1e-6
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureKind {
    Pole,
    Corner,
}

/// Feature observed by the lidar front end, in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarFeatureObs {
    pub kind: FeatureKind,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl LidarFeatureObs {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Surveyed map feature in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapFeature {
    pub id: u64,
    pub kind: FeatureKind,
    pub x: f64,
    pub y: f64,
}

impl MapFeature {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FixStatus {
    Fix,
    NoFix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    /// Meaningless when `status` is `NoFix`.
    pub position: [f64; 2],
    pub status: FixStatus,
    pub cov: [[f64; 2]; 2],
}

impl GpsFix {
    pub fn no_fix() -> Self {
        GpsFix {
            position: [0.0, 0.0],
            status: FixStatus::NoFix,
            cov: [[0.0; 2]; 2],
        }
    }

    pub fn has_fix(&self) -> bool {
        self.status == FixStatus::Fix
    }

    pub fn position_vec(&self) -> Vector2<f64> {
        Vector2::new(self.position[0], self.position[1])
    }

    pub fn cov_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub features: Vec<LidarFeatureObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasurementPayload {
    EncoderSpeed { v: f64, sigma: f64 },
    GyroYawRate { omega: f64, sigma: f64 },
    GpsFix(GpsFix),
    LidarScan(LidarScan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub timestamp: Timestamp,
    pub payload: MeasurementPayload,
}

impl Measurement {
    pub fn new(timestamp: Timestamp, payload: MeasurementPayload) -> Self {
        Measurement { timestamp, payload }
    }

    pub fn stream(&self) -> &'static str {
        match self.payload {
            MeasurementPayload::EncoderSpeed { .. } => "encoder",
            MeasurementPayload::GyroYawRate { .. } => "gyro",
            MeasurementPayload::GpsFix(_) => "gps",
            MeasurementPayload::LidarScan(_) => "lidar",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_heading(0.0).unwrap(), 0.0);
        assert!((normalize_heading(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert!((normalize_heading(-3.0 * FRAC_PI_2).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert!((normalize_heading(-PI).unwrap() - PI).abs() < 1e-12);
        assert!(normalize_heading(f64::NAN).is_err());
        assert!(normalize_heading(f64::INFINITY).is_err());
    }

    #[test]
    fn transform_examples() {
        let p = transform_to_map(&Pose2D::origin(), Vector2::new(1.0, 0.0));
        assert!((p - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        let p = transform_to_map(&Pose2D::new(0.0, 0.0, FRAC_PI_2), Vector2::new(1.0, 0.0));
        assert!((p - Vector2::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_half_turn_matches_matrix_oracle() {
        // hand-written rotation matrix for heading π: [[-1, 0], [0, -1]]
        let r = [[-1.0, 0.0], [0.0, -1.0]];
        let local = [1.0, 1.0];
        let oracle = [
            r[0][0] * local[0] + r[0][1] * local[1] + 2.0,
            r[1][0] * local[0] + r[1][1] * local[1] + 3.0,
        ];
        assert_eq!(oracle, [1.0, 2.0]);
        let p = Pose2D::new(2.0, 3.0, PI).transform_to_map(Vector2::new(1.0, 1.0));
        assert!((p.x - oracle[0]).abs() < 1e-12 && (p.y - oracle[1]).abs() < 1e-12);
    }

    #[test]
    fn covariance_validity() {
        assert!(Covariance3::diagonal(1.0, 2.0, 0.1).is_valid());
        assert!(!Covariance3::diagonal(1.0, -2.0, 0.1).is_valid());
        let mut c = Covariance3::diagonal(1.0, 1.0, 1.0);
        c.0[(0, 1)] = 0.5;
        assert!(!c.is_valid());
        assert!(c.symmetrized().is_valid());
    }

    #[test]
    fn measurement_serde_shape() {
        let m = Measurement::new(
            Timestamp(100_000),
            MeasurementPayload::EncoderSpeed { v: 1.5, sigma: 0.1 },
        );
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(
            s,
            r#"{"timestamp":100000,"payload":{"type":"encoder_speed","v":1.5,"sigma":0.1}}"#
        );
        let back: Measurement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(a in -1e4f64..1e4) {
            let n = normalize_heading(a).unwrap();
            proptest::prop_assert!(n > -PI && n <= PI);
            proptest::prop_assert_eq!(normalize_heading(n).unwrap(), n);
            let k = ((a - n) / (2.0 * PI)).round();
            proptest::prop_assert!((a - n - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn map_local_round_trip(x in -1e3f64..1e3, y in -1e3f64..1e3, h in -4.0f64..4.0,
                                px in -100f64..100.0, py in -100f64..100.0) {
            let pose = Pose2D::new(x, y, h);
            let local = Vector2::new(px, py);
            let back = pose.transform_to_local(pose.transform_to_map(local));
            proptest::prop_assert!((back - local).norm() < 1e-9);
        }
    }
}
