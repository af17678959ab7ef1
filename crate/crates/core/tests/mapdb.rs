mod support;

use proptest::prelude::*;

use btloc::mapdb::{FeatureLayer, GpsQuality, LocationLayer, MapDb, QualityThresholds};
use btloc::pipeline::{SensorKind, UpdateOutcome};
use btloc::types::{FeatureKind, MapFeature};
use support::spatial::{self, entry};

use SensorKind::{Gps, Lidar};
use UpdateOutcome::{Accepted, NoFix, Rejected};

#[test]
fn feature_queries_match_linear_scan() {
    assert_eq!(spatial::feature_query_mismatches(1000, 500, 11), 0);
}

#[test]
fn cell_queries_match_brute_force() {
    assert_eq!(spatial::cell_query_mismatches(1000, 500, 12), 0);
}

#[test]
fn query_ball_is_closed() {
    let layer = FeatureLayer::from_features([MapFeature {
        id: 1,
        kind: FeatureKind::Pole,
        x: 3.0,
        y: 4.0,
    }])
    .unwrap();
    assert_eq!(layer.query((0.0, 0.0), 5.0).len(), 1);
    assert!(layer.query((0.0, 0.0), 4.999).is_empty());
    assert!(FeatureLayer::default().query((0.0, 0.0), 10.0).is_empty());
}

#[test]
fn duplicate_feature_id_is_refused() {
    let f = spatial::random_features(1, 0)[0];
    assert!(FeatureLayer::from_features([f, f]).is_err());
}

#[test]
fn three_accepted_seven_rejected_is_noisy() {
    let mut log = vec![entry(1.0, 1.0, 0.0, Gps, Accepted); 3];
    log.extend(vec![entry(2.0, 2.0, 0.0, Gps, Rejected); 7]);
    let layer = LocationLayer::build(&log, &QualityThresholds::default());
    assert_eq!(layer.gps_quality(5.0, 5.0), GpsQuality::Noisy);
}

#[test]
fn quality_classes_at_their_edges() {
    let t = QualityThresholds::default();
    assert_eq!(t.classify(8, 2, 0), GpsQuality::Usable);
    assert_eq!(t.classify(1, 1, 0), GpsQuality::Noisy);
    assert_eq!(t.classify(1, 9, 0), GpsQuality::Noisy);
    assert_eq!(t.classify(1, 10, 0), GpsQuality::Unavailable);
    assert_eq!(t.classify(0, 0, 4), GpsQuality::Unavailable);
    assert_eq!(t.classify(0, 0, 0), GpsQuality::Usable);
}

#[test]
fn unvisited_cell_defaults_to_usable() {
    let layer = LocationLayer::build(&[entry(1.0, 1.0, 0.0, Gps, NoFix)], &QualityThresholds::default());
    assert_eq!(layer.gps_quality(1.0, 1.0), GpsQuality::Unavailable);
    assert_eq!(layer.gps_quality(500.0, 1.0), GpsQuality::Usable);
}

#[test]
fn history_box_straddling_two_cells_merges() {
    let log = [
        entry(8.0, 5.0, 0.1, Lidar, Accepted),
        entry(12.0, 5.0, 0.2, Lidar, Accepted),
        entry(16.0, 5.0, 0.3, Lidar, Accepted),
        entry(9.0, 5.0, 0.4, Lidar, Rejected),
    ];
    let layer = LocationLayer::build(&log, &QualityThresholds::default());
    let mut got = layer.lidar_history(10.0, 5.0, 10.0);
    got.sort_by(f64::total_cmp);
    assert_eq!(got, vec![0.1, 0.2]);
    assert!(layer.lidar_history(100.0, 100.0, 10.0).is_empty());
}

#[test]
fn map_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.json");
    let map = MapDb::new(
        FeatureLayer::from_features(spatial::random_features(50, 3)).unwrap(),
        LocationLayer::build(&spatial::random_entries(200, 4), &QualityThresholds::default()),
    );
    map.save(&path).unwrap();
    let back = MapDb::load(&path).unwrap();
    assert_eq!(back.to_file(), map.to_file());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["cx", "cy", "gps_quality", "headings", "samples"] {
        assert!(json["cells"][0].get(key).is_some(), "missing {key}");
    }
    for key in ["id", "kind", "x", "y"] {
        assert!(json["features"][0].get(key).is_some(), "missing {key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn build_ignores_concatenation_order(seed in 0u64..1000, split in 0usize..300) {
        let all = spatial::random_entries(300, seed);
        let (a, b) = all.split_at(split);
        let t = QualityThresholds::default();
        let ab: Vec<_> = a.iter().chain(b).cloned().collect();
        let ba: Vec<_> = b.iter().chain(a).cloned().collect();
        let one = LocationLayer::build(&ab, &t);
        prop_assert_eq!(&one, &LocationLayer::build(&ba, &t));
        prop_assert_eq!(&one, &LocationLayer::build(&ab, &t));
    }

    #[test]
    fn unavailable_cells_have_low_acceptance(seed in 0u64..1000) {
        let layer = LocationLayer::build(&spatial::random_entries(300, seed), &QualityThresholds::default());
        for c in layer.cells() {
            if c.gps_quality == GpsQuality::Unavailable {
                let decided = c.gps_accepted + c.gps_rejected;
                prop_assert!(decided == 0 || (c.gps_accepted as f64) < 0.1 * decided as f64);
            }
            prop_assert_eq!(c.headings.len(), c.heading_positions.len());
        }
    }

    #[test]
    fn history_stays_inside_the_box(seed in 0u64..1000, x in -45.0..45.0f64, y in -45.0..45.0f64) {
        let entries = spatial::random_entries(300, seed);
        let layer = LocationLayer::build(&entries, &QualityThresholds::default());
        let got = layer.lidar_history(x, y, 10.0);
        for h in got {
            prop_assert!(entries.iter().any(|e| e.pose.heading == h
                && (e.pose.x - x).abs() <= 5.0 && (e.pose.y - y).abs() <= 5.0));
        }
    }
}
