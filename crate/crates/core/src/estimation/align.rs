use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::types::{LidarScan, MapFeature, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub association_radius: f64,
    pub min_matches: usize,
    pub max_rms: f64,
    /// Re-association passes after the first fit.
    pub iterations: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            association_radius: 2.0,
            min_matches: 3,
            max_rms: 0.5,
            iterations: 3,
        }
    }
}

/// Scan-to-map fit. `converged` implies `matched_count >= min_matches` and
/// `rms_residual <= max_rms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pose: Pose2D,
    pub matched_count: usize,
    pub rms_residual: f64,
    pub converged: bool,
}

/// Rigid transform (θ, t) minimising Σ‖R(θ)·p + t − q‖². Empty input gives identity.
pub fn rigid_fit(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> (f64, Vector2<f64>) {
    if pairs.is_empty() {
        return (0.0, Vector2::zeros());
    }
    let n = pairs.len() as f64;
    let p_bar = pairs.iter().fold(Vector2::zeros(), |a, (p, _)| a + p) / n;
    let q_bar = pairs.iter().fold(Vector2::zeros(), |a, (_, q)| a + q) / n;
    let (mut dot, mut cross) = (0.0, 0.0);
    for (p, q) in pairs {
        let a = p - p_bar;
        let b = q - q_bar;
        dot += a.dot(&b);
        cross += a.x * b.y - a.y * b.x;
    }
    let theta = cross.atan2(dot);
    let t = q_bar - Rotation2::new(theta) * p_bar;
    (theta, t)
}

/// Greedy one-to-one nearest same-kind association; a contested map feature
/// goes to the closer observation.
fn associate(
    observed: &[(crate::types::FeatureKind, Vector2<f64>)],
    map: &[MapFeature],
    radius: f64,
) -> Vec<(usize, usize, f64)> {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (oi, (kind, pos)) in observed.iter().enumerate() {
        let best = map
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind == *kind)
            .map(|(mi, m)| (mi, (m.position() - pos).norm()))
            .filter(|&(_, d)| d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((mi, d)) = best {
            candidates.push((oi, mi, d));
        }
    }
    candidates.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; map.len()];
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !taken[c.1] {
            taken[c.1] = true;
            out.push(c);
        }
    }
    out
}

/// Aligns a feature scan against map features near the prior pose.
pub fn align_scan(scan: &LidarScan, prior: &Pose2D, map: &[MapFeature], cfg: &AlignConfig) -> AlignmentResult {
    let local: Vec<_> = scan.features.iter().map(|f| (f.kind, f.position())).collect();
    let mut pose = *prior;
    let mut matched = 0;
    let mut rms = f64::INFINITY;
    for _ in 0..=cfg.iterations {
        let observed: Vec<_> = local
            .iter()
            .map(|(k, p)| (*k, pose.transform_to_map(*p)))
            .collect();
        let pairs = associate(&observed, map, cfg.association_radius);
        matched = pairs.len();
        if matched < cfg.min_matches {
            rms = if matched == 0 {
                f64::INFINITY
            } else {
                (pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / matched as f64).sqrt()
            };
            break;
        }
        let pts: Vec<_> = pairs
            .iter()
            .map(|&(oi, mi, _)| (observed[oi].1, map[mi].position()))
            .collect();
        let (theta, t) = rigid_fit(&pts);
        let rot = Rotation2::new(theta);
        let pos = rot * pose.position() + t;
        let next = Pose2D::new(pos.x, pos.y, pose.heading + theta);
        rms = (pts
            .iter()
            .map(|(p, q)| (rot * p + t - q).norm_squared())
            .sum::<f64>()
            / matched as f64)
            .sqrt();
        let moved = (next.position() - pose.position()).norm() + theta.abs();
        pose = next;
        if moved < 1e-12 {
            break;
        }
    }
    AlignmentResult {
        pose,
        matched_count: matched,
        rms_residual: rms,
        converged: matched >= cfg.min_matches && rms <= cfg.max_rms,
    }
}

/// Lidar history gate: passes when no history exists or some historical
/// heading lies within `tolerance` of `heading`.
pub fn history_gate(heading: f64, history: &[f64], tolerance: f64) -> bool {
    history.is_empty()
        || history
            .iter()
            .any(|h| crate::types::wrap_angle(heading - h).abs() <= tolerance)
}
