use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::scenario::{GpsCondition, Scenario};
use super::truth::{Route, TruthSample, TRUTH_PERIOD_US};
use crate::error::SimError;
use crate::types::{
    FeatureKind, FixStatus, GpsFix, LidarFeatureObs, LidarScan, MapFeature, Measurement, MeasurementPayload,
};

/// Stream periods in µs.
pub const GYRO_PERIOD_US: u64 = 10_000;
pub const ENCODER_PERIOD_US: u64 = 100_000;
pub const LIDAR_PERIOD_US: u64 = 100_000;
pub const GPS_PERIOD_US: u64 = 1_000_000;

/// Features sit 3 to 15 m either side of the route.
const LATERAL_MIN: f64 = 3.0;
const LATERAL_MAX: f64 = 15.0;
const MIN_SEPARATION: f64 = 3.0;

/// Lays out map features along the route from `scenario.map_seed`.
pub fn generate_map(scenario: &Scenario) -> Result<Vec<MapFeature>, SimError> {
    let route = Route::new(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.map_seed);
    let band_area = 2.0 * (LATERAL_MAX - LATERAL_MIN);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut out: Vec<MapFeature> = Vec::new();
    let slices = route.length().ceil() as usize;
    for k in 0..slices {
        let mid = k as f64 + 0.5;
        let mean = scenario.attrs_at(mid).density * band_area;
        let count = if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
        } else {
            0
        };
        for _ in 0..count {
            let s = (k as f64 + rng.random::<f64>()).min(route.length());
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let offset = rng.random_range(LATERAL_MIN..LATERAL_MAX);
            let kind = if rng.random::<f64>() < 0.7 {
                FeatureKind::Pole
            } else {
                FeatureKind::Corner
            };
            let p = route.pose_at_arc(s).position() + route.normal_at_arc(s) * (side * offset);
            let cell = ((p.x / MIN_SEPARATION).floor() as i64, (p.y / MIN_SEPARATION).floor() as i64);
            let crowded = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    grid.get(&(cell.0 + dx, cell.1 + dy)).is_some_and(|v| {
                        v.iter()
                            .any(|&i| (out[i].position() - p).norm() < MIN_SEPARATION)
                    })
                })
            });
            if crowded {
                continue;
            }
            grid.entry(cell).or_default().push(out.len());
            out.push(MapFeature {
                id: out.len() as u64,
                kind,
                x: p.x,
                y: p.y,
            });
        }
    }
    Ok(out)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noisy sensor streams from `truth`, ordered by time and, within one
/// timestamp, gyro, encoder, GPS, lidar. All draws come from one generator
/// seeded with `scenario.seed` in that fixed order.
pub fn synthesize_measurements(
    scenario: &Scenario,
    truth: &[TruthSample],
    map: &[MapFeature],
) -> Vec<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = &scenario.noise;
    let mut out = Vec::with_capacity(truth.len() * 5 / 4);
    let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    const CELL: f64 = 10.0;
    for (i, f) in map.iter().enumerate() {
        index
            .entry(((f.x / CELL).floor() as i64, (f.y / CELL).floor() as i64))
            .or_default()
            .push(i);
    }
    for sample in truth {
        let us = sample.t.micros();
        debug_assert_eq!(us % TRUTH_PERIOD_US, 0);
        let attrs = scenario.attrs_at(sample.s);
        if us % GYRO_PERIOD_US == 0 {
            let omega = sample.omega + n.gyro_bias + n.gyro_sigma * gauss(&mut rng);
            out.push(Measurement::new(
                sample.t,
                MeasurementPayload::GyroYawRate {
                    omega,
                    sigma: n.gyro_sigma,
                },
            ));
        }
        if us % ENCODER_PERIOD_US == 0 {
            let v = sample.v + n.encoder_sigma * gauss(&mut rng);
            out.push(Measurement::new(
                sample.t,
                MeasurementPayload::EncoderSpeed {
                    v,
                    sigma: n.encoder_sigma,
                },
            ));
        }
        if us % GPS_PERIOD_US == 0 {
            let fix = match attrs.gps {
                GpsCondition::Denied => GpsFix::no_fix(),
                cond => {
                    let (bias, infl) = match cond {
                        GpsCondition::Noisy { bias, inflation } => (bias, inflation),
                        _ => ([0.0, 0.0], 1.0),
                    };
                    let ex = n.gps_sigma * infl * gauss(&mut rng);
                    let ey = n.gps_sigma * infl * gauss(&mut rng);
                    let var = n.gps_sigma * n.gps_sigma;
                    GpsFix {
                        position: [sample.pose.x + bias[0] + ex, sample.pose.y + bias[1] + ey],
                        status: FixStatus::Fix,
                        cov: [[var, 0.0], [0.0, var]],
                    }
                }
            };
            out.push(Measurement::new(sample.t, MeasurementPayload::GpsFix(fix)));
        }
        if us % LIDAR_PERIOD_US == 0 {
            let r = attrs.lidar_range;
            let (lo_x, lo_y) = (
                ((sample.pose.x - r) / CELL).floor() as i64,
                ((sample.pose.y - r) / CELL).floor() as i64,
            );
            let (hi_x, hi_y) = (
                ((sample.pose.x + r) / CELL).floor() as i64,
                ((sample.pose.y + r) / CELL).floor() as i64,
            );
            let mut visible: Vec<usize> = Vec::new();
            for cx in lo_x..=hi_x {
                for cy in lo_y..=hi_y {
                    if let Some(v) = index.get(&(cx, cy)) {
                        visible.extend(v.iter().copied().filter(|&i| {
                            (map[i].position() - sample.pose.position()).norm() <= r
                        }));
                    }
                }
            }
            visible.sort_unstable();
            let features = visible
                .into_iter()
                .map(|i| {
                    let f = &map[i];
                    let local = sample.pose.transform_to_local(f.position());
                    LidarFeatureObs {
                        kind: f.kind,
                        x: local.x + n.lidar_sigma * gauss(&mut rng),
                        y: local.y + n.lidar_sigma * gauss(&mut rng),
                        sigma: n.lidar_sigma,
                    }
                })
                .collect();
            out.push(Measurement::new(sample.t, MeasurementPayload::LidarScan(LidarScan { features })));
        }
    }
    out
}
