use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, Segment};
use crate::error::SimError;
use crate::types::{Pose2D, Timestamp};

/// Ground-truth sampling period.
pub const TRUTH_PERIOD_US: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: Timestamp,
    pub pose: Pose2D,
    pub v: f64,
    pub omega: f64,
    /// Arc length travelled.
    pub s: f64,
}

/// Route geometry with segment start poses, arc lengths and times precomputed.
#[derive(Debug, Clone)]
pub struct Route {
    segments: Vec<Segment>,
    starts: Vec<Pose2D>,
    s0: Vec<f64>,
    t0: Vec<f64>,
}

fn advance(start: &Pose2D, seg: &Segment, frac_len: f64) -> Pose2D {
    match *seg {
        Segment::Line { .. } => {
            let (sn, cs) = start.heading.sin_cos();
            Pose2D::new(start.x + frac_len * cs, start.y + frac_len * sn, start.heading)
        }
        Segment::Arc { radius, angle, .. } => {
            let sign = angle.signum();
            let dtheta = sign * frac_len / radius;
            // centre of curvature lies to the left for positive turns
            let (sn, cs) = start.heading.sin_cos();
            let cx = start.x - sign * radius * sn;
            let cy = start.y + sign * radius * cs;
            let h = start.heading + dtheta;
            let (sh, ch) = h.sin_cos();
            Pose2D::new(cx + sign * radius * sh, cy - sign * radius * ch, h)
        }
        Segment::Stop { .. } => *start,
    }
}

impl Route {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        if scenario.route_length() <= 0.0 {
            return Err(SimError::EmptyRoute);
        }
        let mut starts = Vec::with_capacity(scenario.route.len());
        let (mut s0, mut t0) = (Vec::new(), Vec::new());
        let (mut pose, mut s, mut t) = (scenario.start, 0.0, 0.0);
        for seg in &scenario.route {
            starts.push(pose);
            s0.push(s);
            t0.push(t);
            pose = advance(&pose, seg, seg.length());
            s += seg.length();
            t += seg.duration();
        }
        Ok(Route {
            segments: scenario.route.clone(),
            starts,
            s0,
            t0,
        })
    }

    pub fn length(&self) -> f64 {
        self.s0.last().copied().unwrap_or(0.0) + self.segments.last().map_or(0.0, Segment::length)
    }

    pub fn duration(&self) -> f64 {
        self.t0.last().copied().unwrap_or(0.0) + self.segments.last().map_or(0.0, Segment::duration)
    }

    /// Pose at arc length `s`, clamped to the route. Stops are skipped.
    pub fn pose_at_arc(&self, s: f64) -> Pose2D {
        let s = s.clamp(0.0, self.length());
        let i = self
            .segments
            .iter()
            .enumerate()
            .rev()
            .find(|(i, seg)| self.s0[*i] <= s && seg.length() > 0.0)
            .map_or(0, |(i, _)| i);
        advance(&self.starts[i], &self.segments[i], (s - self.s0[i]).min(self.segments[i].length()))
    }

    /// Left-pointing unit normal at arc length `s`.
    pub fn normal_at_arc(&self, s: f64) -> Vector2<f64> {
        let h = self.pose_at_arc(s).heading;
        Vector2::new(-h.sin(), h.cos())
    }

    /// Truth at time `t` seconds; the vehicle rests at the route end afterwards.
    pub fn sample(&self, t: Timestamp) -> TruthSample {
        let ts = t.as_secs();
        let n = self.segments.len();
        let mut i = 0;
        while i + 1 < n && ts >= self.t0[i + 1] {
            i += 1;
        }
        let seg = &self.segments[i];
        let local = ts - self.t0[i];
        if local >= seg.duration() {
            let end = advance(&self.starts[i], seg, seg.length());
            return TruthSample {
                t,
                pose: end,
                v: 0.0,
                omega: 0.0,
                s: self.s0[i] + seg.length(),
            };
        }
        let (v, omega, dist) = match *seg {
            Segment::Line { speed, .. } => (speed, 0.0, speed * local),
            Segment::Arc { radius, angle, speed } => (speed, angle.signum() * speed / radius, speed * local),
            Segment::Stop { .. } => (0.0, 0.0, 0.0),
        };
        TruthSample {
            t,
            pose: advance(&self.starts[i], seg, dist),
            v,
            omega,
            s: self.s0[i] + dist,
        }
    }
}

/// Ground truth at 100 Hz over the scenario duration, inclusive of t = 0.
pub fn generate_ground_truth(scenario: &Scenario) -> Result<Vec<TruthSample>, SimError> {
    let route = Route::new(scenario)?;
    let end_us = (scenario.duration() * 1e6).round() as u64;
    Ok((0..=end_us / TRUTH_PERIOD_US)
        .map(|k| route.sample(Timestamp(k * TRUTH_PERIOD_US)))
        .collect())
}
