use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::types::Pose2D;

/// One piece of the route. Lines and arcs are driven at constant speed; a
/// stop holds the vehicle still.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Segment {
    Line { length: f64, speed: f64 },
    /// Positive `angle` turns left.
    Arc { radius: f64, angle: f64, speed: f64 },
    Stop { duration: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, angle, .. } => radius * angle.abs(),
            Segment::Stop { .. } => 0.0,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Line { length, speed } => length / speed,
            Segment::Arc { speed, .. } => self.length() / speed,
            Segment::Stop { duration } => duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZoneKind {
    FeatureRich,
    FeatureSparse,
    GpsNoisy {
        bias_m: f64,
        /// Bias direction in the map frame.
        #[serde(default = "default_bias_direction")]
        bias_direction_deg: f64,
        /// Multiplies the true GPS noise; the reported covariance is left alone.
        #[serde(default = "one")]
        inflation: f64,
    },
    GpsDenied,
    /// GPS denied throughout; feature rich over `entrance_m` at each end,
    /// sparse with a short lidar range in between.
    Carpark {
        #[serde(default = "default_entrance")]
        entrance_m: f64,
        #[serde(default = "default_interior_range")]
        interior_range_m: f64,
    },
}

fn default_bias_direction() -> f64 {
    90.0
}
fn one() -> f64 {
    1.0
}
fn default_entrance() -> f64 {
    20.0
}
fn default_interior_range() -> f64 {
    15.0
}

/// Arc-length interval `[start, end)` with one attribute override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub start: f64,
    pub end: f64,
    #[serde(flatten)]
    pub kind: ZoneKind,
    /// Feature density override, features/m².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar_range_m: Option<f64>,
}

impl Zone {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.start && s < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Densities {
    pub rich: f64,
    pub sparse: f64,
}

impl Default for Densities {
    fn default() -> Self {
        Densities {
            rich: 0.05,
            sparse: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub encoder_sigma: f64,
    pub gyro_sigma: f64,
    pub gps_sigma: f64,
    pub lidar_sigma: f64,
    #[serde(default)]
    pub gyro_bias: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            encoder_sigma: 0.05,
            gyro_sigma: 0.002,
            gps_sigma: 1.5,
            lidar_sigma: 0.1,
            gyro_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub lidar_range: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec { lidar_range: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "Pose2D::origin")]
    pub start: Pose2D,
    pub route: Vec<Segment>,
    #[serde(default)]
    pub zones: Vec<Zone>,
    #[serde(default)]
    pub densities: Densities,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub sensors: SensorSpec,
    pub seed: u64,
    /// Seed for the map feature layout, independent of the measurement seed.
    pub map_seed: u64,
    /// Seconds; defaults to the time needed to drive the route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GpsCondition {
    Normal,
    Noisy { bias: [f64; 2], inflation: f64 },
    Denied,
}

/// Environment at one arc-length position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneAttrs {
    pub density: f64,
    pub gps: GpsCondition,
    pub lidar_range: f64,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        if self.route_length() <= 0.0 {
            return Err(SimError::EmptyRoute);
        }
        for (i, seg) in self.route.iter().enumerate() {
            let ok = match *seg {
                Segment::Line { length, speed } => length >= 0.0 && speed > 0.0,
                Segment::Arc { radius, speed, angle } => radius > 0.0 && speed > 0.0 && angle.is_finite(),
                Segment::Stop { duration } => duration >= 0.0,
            };
            if !ok {
                return invalid(format!("segment {i} has non-positive speed, radius or length"));
            }
        }
        for (i, z) in self.zones.iter().enumerate() {
            // NaN bounds count as empty
            if z.end.partial_cmp(&z.start) != Some(std::cmp::Ordering::Greater) {
                return invalid(format!("zone {i} is empty"));
            }
        }
        let n = &self.noise;
        if !(n.encoder_sigma > 0.0 && n.gyro_sigma > 0.0 && n.gps_sigma > 0.0 && n.lidar_sigma > 0.0) {
            return invalid("noise sigmas must be strictly positive".into());
        }
        if self.duration.is_some_and(|d| d <= 0.0) {
            return invalid("duration must be positive".into());
        }
        Ok(())
    }

    pub fn route_length(&self) -> f64 {
        self.route.iter().map(Segment::length).sum()
    }

    pub fn route_duration(&self) -> f64 {
        self.route.iter().map(Segment::duration).sum()
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or_else(|| self.route_duration())
    }

    /// Applies zones in declaration order; later zones override earlier ones
    /// attribute by attribute.
    pub fn attrs_at(&self, s: f64) -> ZoneAttrs {
        let mut a = ZoneAttrs {
            density: self.densities.rich,
            gps: GpsCondition::Normal,
            lidar_range: self.sensors.lidar_range,
        };
        for z in self.zones.iter().filter(|z| z.contains(s)) {
            match &z.kind {
                ZoneKind::FeatureRich => a.density = z.density.unwrap_or(self.densities.rich),
                ZoneKind::FeatureSparse => a.density = z.density.unwrap_or(self.densities.sparse),
                ZoneKind::GpsNoisy {
                    bias_m,
                    bias_direction_deg,
                    inflation,
                } => {
                    let d = bias_direction_deg.to_radians();
                    a.gps = GpsCondition::Noisy {
                        bias: [bias_m * d.cos(), bias_m * d.sin()],
                        inflation: *inflation,
                    };
                }
                ZoneKind::GpsDenied => a.gps = GpsCondition::Denied,
                ZoneKind::Carpark {
                    entrance_m,
                    interior_range_m,
                } => {
                    a.gps = GpsCondition::Denied;
                    if s < z.start + entrance_m || s >= z.end - entrance_m {
                        a.density = self.densities.rich;
                    } else {
                        a.density = z.density.unwrap_or(self.densities.sparse);
                        a.lidar_range = *interior_range_m;
                    }
                }
            }
            if let Some(r) = z.lidar_range_m {
                a.lidar_range = r;
            }
        }
        a
    }

    /// Arc-length intervals where GPS is denied, merged.
    pub fn denied_intervals(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .zones
            .iter()
            .filter(|z| matches!(z.kind, ZoneKind::GpsDenied | ZoneKind::Carpark { .. }))
            .map(|z| (z.start, z.end))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s, e) in v {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        merged
    }
}
