//! Hand-built run logs for the metrics checks.

use btloc::behaviors::{EventKind, TransitionEvent};
use btloc::estimation::{FilterMode, Health};
use btloc::metrics::TickRecord;
use btloc::types::{Pose2D, Timestamp};

pub fn tick(t_ms: u64, x: f64, y: f64, mode: FilterMode) -> TickRecord {
    let p = Pose2D::new(x, y, 0.0);
    TickRecord {
        t: Timestamp::from_millis(t_ms),
        main: p,
        main_mode: mode,
        main_health: Health::Good,
        backup: p,
        backup_mode: FilterMode::GpsDr,
        backup_health: Health::Good,
        backup_gps: None,
        truth: Some(p),
    }
}

/// 10 m on lidar, then 5 m on GPS, then 5 m dead reckoning along the x axis.
/// Each segment is attributed to the mode at its start tick.
pub fn three_segments() -> Vec<TickRecord> {
    vec![
        tick(0, 0.0, 0.0, FilterMode::LidarDr),
        tick(500, 10.0, 0.0, FilterMode::GpsDr),
        tick(1000, 15.0, 0.0, FilterMode::DrOnly),
        tick(1500, 20.0, 0.0, FilterMode::DrOnly),
    ]
}

pub fn switch(t_ms: u64, from: FilterMode, to: FilterMode) -> TransitionEvent {
    TransitionEvent {
        timestamp: Timestamp::from_millis(t_ms),
        kind: EventKind::SensorSwitch,
        from_mode: from,
        to_mode: to,
        jump_distance: 0.0,
    }
}
