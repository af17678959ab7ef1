//! Brute-force oracles for the map layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use btloc::estimation::GateBound;
use btloc::mapdb::{FeatureLayer, GpsQuality, LocationLayer, LocationLogEntry, QualityThresholds};
use btloc::pipeline::{FilterId, SensorKind, UpdateOutcome, UpdateStats};
use btloc::types::{FeatureKind, MapFeature, Pose2D, Timestamp};

pub fn random_features(n: usize, seed: u64) -> Vec<MapFeature> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| MapFeature {
            id: i as u64,
            kind: if r.random_bool(0.5) { FeatureKind::Pole } else { FeatureKind::Corner },
            x: r.random_range(-200.0..200.0),
            y: r.random_range(-200.0..200.0),
        })
        .collect()
}

pub fn entry(x: f64, y: f64, heading: f64, sensor: SensorKind, outcome: UpdateOutcome) -> LocationLogEntry {
    LocationLogEntry {
        pose: Pose2D::new(x, y, heading),
        stats: UpdateStats {
            timestamp: Timestamp::ZERO,
            sensor,
            filter: FilterId::Audit,
            innovation: Vec::new(),
            mahalanobis: None,
            outcome,
            bound: GateBound::ThreeSigma,
            history_gate: None,
            rms_residual: None,
            correction: None,
        },
    }
}

pub fn random_entries(n: usize, seed: u64) -> Vec<LocationLogEntry> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let outcomes = [
        UpdateOutcome::Accepted,
        UpdateOutcome::Rejected,
        UpdateOutcome::NoFix,
        UpdateOutcome::NotConverged,
    ];
    (0..n)
        .map(|_| {
            // a narrow region so cells collect several samples each
            let x = r.random_range(-40.0..40.0);
            let y = r.random_range(-40.0..40.0);
            let sensor = if r.random_bool(0.5) { SensorKind::Gps } else { SensorKind::Lidar };
            let outcome = outcomes[r.random_range(0..4)];
            entry(x, y, r.random_range(-3.0..3.0), sensor, outcome)
        })
        .collect()
}

/// Queries whose grid answer differs from a linear scan of the closed ball.
pub fn feature_query_mismatches(n: usize, queries: usize, seed: u64) -> usize {
    let features = random_features(n, seed);
    let layer = FeatureLayer::from_features(features.clone()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut bad = 0;
    for q in 0..queries {
        let c = (r.random_range(-220.0..220.0), r.random_range(-220.0..220.0));
        let radius = r.random_range(0.1..60.0);
        let mut want: Vec<u64> = features
            .iter()
            .filter(|f| ((f.x - c.0).powi(2) + (f.y - c.1).powi(2)).sqrt() <= radius)
            .map(|f| f.id)
            .collect();
        want.sort();
        let got: Vec<u64> = layer.query(c, radius).iter().map(|f| f.id).collect();
        bad += usize::from(got != want);
        // a query centred exactly on a feature with radius 0+ always finds it
        if q < 50 {
            let f = features[q];
            bad += usize::from(!layer.query((f.x, f.y), 1e-9).iter().any(|g| g.id == f.id));
        }
    }
    bad
}

fn cell_index(v: f64) -> i64 {
    (v / 10.0).floor() as i64
}

fn oracle_quality(entries: &[LocationLogEntry], x: f64, y: f64) -> GpsQuality {
    let (cx, cy) = (cell_index(x), cell_index(y));
    let (mut a, mut rj, mut nf) = (0u32, 0u32, 0u32);
    for e in entries {
        if e.stats.sensor != SensorKind::Gps || cell_index(e.pose.x) != cx || cell_index(e.pose.y) != cy {
            continue;
        }
        match e.stats.outcome {
            UpdateOutcome::Accepted => a += 1,
            UpdateOutcome::Rejected => rj += 1,
            UpdateOutcome::NoFix => nf += 1,
            UpdateOutcome::NotConverged => {}
        }
    }
    if a + rj == 0 {
        return if nf > 0 { GpsQuality::Unavailable } else { GpsQuality::Usable };
    }
    let ratio = f64::from(a) / f64::from(a + rj);
    if ratio >= 0.8 {
        GpsQuality::Usable
    } else if ratio >= 0.1 {
        GpsQuality::Noisy
    } else {
        GpsQuality::Unavailable
    }
}

fn oracle_history(entries: &[LocationLogEntry], x: f64, y: f64) -> Vec<f64> {
    let mut v: Vec<f64> = entries
        .iter()
        .filter(|e| e.stats.sensor == SensorKind::Lidar && e.stats.outcome == UpdateOutcome::Accepted)
        .filter(|e| (e.pose.x - x).abs() <= 5.0 && (e.pose.y - y).abs() <= 5.0)
        .map(|e| e.pose.heading)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Cell queries (GPS quality, lidar history) disagreeing with brute force.
pub fn cell_query_mismatches(n: usize, queries: usize, seed: u64) -> usize {
    let entries = random_entries(n, seed);
    let layer = LocationLayer::build(&entries, &QualityThresholds::default());
    let mut r = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut bad = 0;
    for _ in 0..queries {
        let (x, y) = (r.random_range(-50.0..50.0), r.random_range(-50.0..50.0));
        bad += usize::from(layer.gps_quality(x, y) != oracle_quality(&entries, x, y));
        let mut got = layer.lidar_history(x, y, 10.0);
        got.sort_by(f64::total_cmp);
        bad += usize::from(got != oracle_history(&entries, x, y));
    }
    bad
}
