//! Whole-run fixtures: scenarios, cached survey maps and runner helpers.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use btloc::estimation::FilterMode;
use btloc::mapdb::{FeatureLayer, LocationLayer, MapDb};
use btloc::runner::{survey_map, RunOptions, RunSettings, Runner};
use btloc::simulator::{generate_map, simulate, Densities, Scenario, Segment, Zone, ZoneKind};
use btloc::types::{Pose2D, Timestamp};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn usyd() -> Scenario {
    Scenario::load(&scenario_path("usyd-analog.json")).expect("bundled scenario loads")
}

pub fn usyd_seed(seed: u64) -> Scenario {
    let mut s = usyd();
    s.seed = seed;
    s
}

/// Survey map of the bundled scenario, built once per test binary.
pub fn usyd_map() -> Arc<MapDb> {
    static MAP: OnceLock<Arc<MapDb>> = OnceLock::new();
    Arc::clone(MAP.get_or_init(|| Arc::new(survey_map(&usyd(), &RunSettings::default()).expect("survey succeeds"))))
}

/// Features only; every cell reads as unvisited.
pub fn bare_map(scenario: &Scenario) -> Arc<MapDb> {
    let features = FeatureLayer::from_features(generate_map(scenario).unwrap()).unwrap();
    Arc::new(MapDb::new(features, LocationLayer::default()))
}

/// A featureless straight drive, so only GPS can localise. When `bias` is
/// given, fixes inside that arc-length window are shifted 15 m sideways.
pub fn gps_only(seed: u64, bias: Option<(f64, f64)>) -> Scenario {
    let zones = bias
        .map(|(start, end)| Zone {
            start,
            end,
            kind: ZoneKind::GpsNoisy {
                bias_m: 15.0,
                bias_direction_deg: 90.0,
                inflation: 1.0,
            },
            density: None,
            lidar_range_m: None,
        })
        .into_iter()
        .collect();
    Scenario {
        name: "gps-only".into(),
        start: Pose2D::origin(),
        route: vec![Segment::Line {
            length: 1200.0,
            speed: 10.0,
        }],
        zones,
        densities: Densities { rich: 0.0, sparse: 0.0 },
        noise: Default::default(),
        sensors: Default::default(),
        seed,
        map_seed: 3,
        duration: None,
    }
}

pub fn runner(scenario: &Scenario, map: Arc<MapDb>, settings: &RunSettings) -> Runner {
    let sim = simulate(scenario).unwrap();
    let end = Timestamp::from_micros((scenario.duration() * 1e6).round() as u64);
    Runner::new(
        scenario.start,
        map,
        sim.measurements,
        end,
        Some(sim.truth),
        settings,
        RunOptions::default(),
    )
    .unwrap()
}

/// Consecutive duplicates removed.
pub fn mode_sequence(modes: impl IntoIterator<Item = FilterMode>) -> Vec<FilterMode> {
    let mut v: Vec<FilterMode> = modes.into_iter().collect();
    v.dedup();
    v
}

/// Whether `pattern` occurs in `seq` as an ordered subsequence.
pub fn contains_in_order(seq: &[FilterMode], pattern: &[FilterMode]) -> bool {
    let mut it = seq.iter();
    pattern.iter().all(|p| it.any(|m| m == p))
}
