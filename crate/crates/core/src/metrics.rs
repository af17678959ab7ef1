//! Run evaluation: mode-distance split, event tallies, accuracy against
//! ground truth, lidar frame outcomes and tick timing; plus mode-coloured
//! GeoJSON trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::behaviors::{EventKind, TransitionEvent};
use crate::error::MetricsError;
use crate::estimation::{FilterMode, Health};
use crate::pipeline::{FilterId, SensorKind, UpdateOutcome, UpdateStats};
use crate::types::{Pose2D, Timestamp};

/// Both filters as seen at the end of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: Timestamp,
    pub main: Pose2D,
    pub main_mode: FilterMode,
    pub main_health: Health,
    pub backup: Pose2D,
    pub backup_mode: FilterMode,
    pub backup_health: Health,
    /// Outcome of the backup filter's latest GPS decision during the tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backup_gps: Option<UpdateOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Pose2D>,
}

impl TickRecord {
    pub fn pose(&self, f: FilterId) -> Pose2D {
        match f {
            FilterId::Backup => self.backup,
            _ => self.main,
        }
    }

    pub fn mode(&self, f: FilterId) -> FilterMode {
        match f {
            FilterId::Backup => self.backup_mode,
            _ => self.main_mode,
        }
    }
}

/// Wall-clock cost samples in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLog {
    pub tick_ms: Vec<f64>,
    pub lidar_ms: Vec<f64>,
    pub gps_ms: Vec<f64>,
}

/// Histogram bucket upper edges in ms; the last bucket is open.
pub const HISTOGRAM_EDGES_MS: [f64; 11] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts[i]` holds samples in `[edges[i-1], edges[i])`; one extra open bucket at the end.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(samples: &[f64]) -> Self {
        let mut counts = vec![0; HISTOGRAM_EDGES_MS.len() + 1];
        for &s in samples {
            let i = HISTOGRAM_EDGES_MS.iter().position(|&e| s < e).unwrap_or(HISTOGRAM_EDGES_MS.len());
            counts[i] += 1;
        }
        Histogram { counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower_ms,upper_ms,count\n");
        let mut lower = 0.0;
        for (i, c) in self.counts.iter().enumerate() {
            let upper = HISTOGRAM_EDGES_MS
                .get(i)
                .map_or_else(|| "inf".to_string(), |e| e.to_string());
            out.push_str(&format!("{lower},{upper},{c}\n"));
            lower = HISTOGRAM_EDGES_MS.get(i).copied().unwrap_or(f64::INFINITY);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_tick_ms: f64,
    pub mean_lidar_ms: f64,
    pub mean_gps_ms: f64,
    pub tick_histogram: Histogram,
    pub lidar_histogram: Histogram,
    pub gps_histogram: Histogram,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl TimingSummary {
    pub fn of(log: &TimingLog) -> Self {
        TimingSummary {
            mean_tick_ms: mean(&log.tick_ms),
            mean_lidar_ms: mean(&log.lidar_ms),
            mean_gps_ms: mean(&log.gps_ms),
            tick_histogram: Histogram::of(&log.tick_ms),
            lidar_histogram: Histogram::of(&log.lidar_ms),
            gps_histogram: Histogram::of(&log.gps_ms),
        }
    }
}

/// Percentages of main-filter lidar frames by outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcomes {
    pub total: usize,
    pub accepted_pct: f64,
    pub rejected_pct: f64,
    pub not_converged_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Mode label to percent of distance travelled in that mode (main filter).
    pub distance_pct: BTreeMap<String, f64>,
    pub distance_m: f64,
    pub switch_count: usize,
    pub recovery_count: usize,
    pub jump_distances: Vec<f64>,
    pub mean_jump_distance: f64,
    /// Filter label to position RMSE against truth.
    pub translation_rmse: BTreeMap<String, f64>,
    /// Main-filter position RMSE against truth, per mode.
    pub rmse_per_mode: BTreeMap<String, f64>,
    /// Standard deviation of the main filter's position error magnitude, per mode.
    pub std_dev_per_mode: BTreeMap<String, f64>,
    pub lidar_frame_outcomes: FrameOutcomes,
    pub tick_count: usize,
    pub final_main_health: Health,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSummary>,
}

const MODES: [FilterMode; 3] = [FilterMode::LidarDr, FilterMode::GpsDr, FilterMode::DrOnly];

fn filter_key(f: FilterId) -> &'static str {
    match f {
        FilterId::Main => "MAIN",
        FilterId::Backup => "BACKUP",
        FilterId::Audit => "AUDIT",
    }
}

/// Evaluates one run. Distance is measured along truth when every tick has
/// it, else along the main estimate, and each tick-to-tick segment counts
/// toward the mode in force at its start.
pub fn compute_report(
    ticks: &[TickRecord],
    events: &[TransitionEvent],
    stats: &[UpdateStats],
    timing: Option<&TimingLog>,
) -> Result<RunReport, MetricsError> {
    let last = ticks.last().ok_or(MetricsError::EmptyTrajectory)?;
    let with_truth = ticks.iter().filter(|t| t.truth.is_some()).count();
    if with_truth != 0 && with_truth != ticks.len() {
        return Err(MetricsError::MismatchedLogs(format!(
            "{with_truth} of {} ticks carry ground truth",
            ticks.len()
        )));
    }
    if let Some(e) = events.iter().find(|e| e.timestamp > last.t) {
        return Err(MetricsError::MismatchedLogs(format!(
            "event at {} after the last tick at {}",
            e.timestamp, last.t
        )));
    }
    let along = |t: &TickRecord| t.truth.unwrap_or(t.main);

    let mut dist: BTreeMap<String, f64> = MODES.iter().map(|m| (m.label().to_string(), 0.0)).collect();
    for w in ticks.windows(2) {
        let d = along(&w[0]).distance_to(&along(&w[1]));
        *dist.entry(w[0].main_mode.label().to_string()).or_insert(0.0) += d;
    }
    let total: f64 = dist.values().sum();
    let distance_pct = if total > 0.0 {
        dist.iter().map(|(k, v)| (k.clone(), 100.0 * v / total)).collect()
    } else {
        dist.keys()
            .map(|k| (k.clone(), if *k == ticks[0].main_mode.label() { 100.0 } else { 0.0 }))
            .collect()
    };

    let switch_count = events.iter().filter(|e| e.kind == EventKind::SensorSwitch).count();
    let recovery_count = events.iter().filter(|e| e.kind == EventKind::LossRecovery).count();
    let jump_distances: Vec<f64> = events.iter().map(|e| e.jump_distance).collect();

    let mut translation_rmse = BTreeMap::new();
    let mut rmse_per_mode = BTreeMap::new();
    let mut std_dev_per_mode = BTreeMap::new();
    if with_truth > 0 {
        for f in [FilterId::Main, FilterId::Backup] {
            let sq: Vec<f64> = ticks
                .iter()
                .map(|t| t.pose(f).distance_to(&t.truth.expect("checked above")).powi(2))
                .collect();
            translation_rmse.insert(filter_key(f).to_string(), mean(&sq).sqrt());
        }
        for m in MODES {
            let errs: Vec<f64> = ticks
                .iter()
                .filter(|t| t.main_mode == m)
                .map(|t| t.main.distance_to(&t.truth.expect("checked above")))
                .collect();
            if errs.is_empty() {
                continue;
            }
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let mu = mean(&errs);
            let var = mean(&errs.iter().map(|e| (e - mu).powi(2)).collect::<Vec<_>>());
            rmse_per_mode.insert(m.label().to_string(), mean(&sq).sqrt());
            std_dev_per_mode.insert(m.label().to_string(), var.sqrt());
        }
    }

    let frames: Vec<&UpdateStats> = stats
        .iter()
        .filter(|s| s.sensor == SensorKind::Lidar && s.filter == FilterId::Main)
        .collect();
    let pct = |o: UpdateOutcome| {
        if frames.is_empty() {
            0.0
        } else {
            100.0 * frames.iter().filter(|s| s.outcome == o).count() as f64 / frames.len() as f64
        }
    };

    Ok(RunReport {
        distance_pct,
        distance_m: total,
        switch_count,
        recovery_count,
        mean_jump_distance: mean(&jump_distances),
        jump_distances,
        translation_rmse,
        rmse_per_mode,
        std_dev_per_mode,
        lidar_frame_outcomes: FrameOutcomes {
            total: frames.len(),
            accepted_pct: pct(UpdateOutcome::Accepted),
            rejected_pct: pct(UpdateOutcome::Rejected),
            not_converged_pct: pct(UpdateOutcome::NotConverged),
        },
        tick_count: ticks.len(),
        final_main_health: last.main_health,
        timing: timing.map(TimingSummary::of),
    })
}

/// Point colour: green lidar, red GPS, blue dead reckoning, yellow for a
/// GPS-driven backup whose latest fix was rejected, grey before initialisation.
pub fn mode_color(mode: FilterMode, gps_outcome: Option<UpdateOutcome>) -> &'static str {
    match mode {
        FilterMode::LidarDr => "green",
        FilterMode::GpsDr if gps_outcome == Some(UpdateOutcome::Rejected) => "yellow",
        FilterMode::GpsDr => "red",
        FilterMode::DrOnly => "blue",
        FilterMode::Uninitialized => "gray",
    }
}

/// One GeoJSON point per tick for filter `f`, with `{t, mode, filter, color}` properties.
pub fn export_trajectory(ticks: &[TickRecord], f: FilterId) -> Result<Value, MetricsError> {
    if ticks.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let features: Vec<Value> = ticks
        .iter()
        .map(|t| {
            let p = t.pose(f);
            let mode = t.mode(f);
            let gps = if f == FilterId::Backup { t.backup_gps } else { None };
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [p.x, p.y] },
                "properties": {
                    "t": t.t.as_secs(),
                    "mode": mode.label(),
                    "filter": filter_key(f),
                    "color": mode_color(mode, gps),
                },
            })
        })
        .collect();
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}
