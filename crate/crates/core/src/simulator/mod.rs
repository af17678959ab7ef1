//! Deterministic driving world: a route with typed zones, analytic ground
//! truth at 100 Hz, a feature map and noisy sensor streams.
//!
//! The same (scenario, seed) always yields a bit-identical measurement
//! stream; the map layout depends only on `map_seed`.

mod record;
mod scenario;
mod synth;
mod truth;

pub use record::{read_log, write_log, LogHeader};
pub use scenario::{Densities, GpsCondition, NoiseSpec, Scenario, Segment, SensorSpec, Zone, ZoneAttrs, ZoneKind};
pub use synth::{
    generate_map, synthesize_measurements, ENCODER_PERIOD_US, GPS_PERIOD_US, GYRO_PERIOD_US, LIDAR_PERIOD_US,
};
pub use truth::{generate_ground_truth, Route, TruthSample, TRUTH_PERIOD_US};

use crate::error::SimError;
use crate::types::{MapFeature, Measurement};

/// Everything one simulated drive produces.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub truth: Vec<TruthSample>,
    pub map: Vec<MapFeature>,
    pub measurements: Vec<Measurement>,
}

pub fn simulate(scenario: &Scenario) -> Result<SimRun, SimError> {
    scenario.validate()?;
    let truth = generate_ground_truth(scenario)?;
    let map = generate_map(scenario)?;
    let measurements = synthesize_measurements(scenario, &truth, &map);
    Ok(SimRun {
        truth,
        map,
        measurements,
    })
}
