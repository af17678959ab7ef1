//! The tick loop: feeds measurements into the localiser pipeline, ticks the
//! behavior tree every period, and collects what the run produced.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::behaviors::{
    build_experiment_tree, instantiate_localiser_tree, topics, Localiser, LocaliserConfig, TransitionEvent,
};
use crate::bt::{BbValue, Blackboard, TraceEntry, Tree, TreeDef};
use crate::error::RunError;
use crate::estimation::{FilterMode, FilterState};
use crate::mapdb::{FeatureLayer, LocationLayer, LocationLogEntry, MapDb, QualityThresholds};
use crate::metrics::{compute_report, export_trajectory, RunReport, TickRecord, TimingLog};
use crate::pipeline::{FilterId, Payload, SensorKind, UpdateOutcome, UpdateStats};
use crate::simulator::{generate_map, simulate, Scenario, TruthSample, TRUTH_PERIOD_US};
use crate::types::{Covariance3, Measurement, MeasurementPayload, Pose2D, Timestamp};

/// Everything about a run other than the scenario and map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub localiser: LocaliserConfig,
    pub tick_period_ms: u64,
    /// Initial covariance diagonal of both filters: x, y (m²), heading (rad²).
    pub initial_cov: [f64; 3],
    /// Main-filter sensors, highest priority first.
    pub main_sensors: Vec<SensorKind>,
    pub backup_sensor: Option<SensorKind>,
    pub thresholds: QualityThresholds,
    /// Prior runs used to build the location model when no map is given.
    pub survey_runs: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            localiser: LocaliserConfig::default(),
            tick_period_ms: 500,
            initial_cov: [0.25, 0.25, 3e-4],
            main_sensors: vec![SensorKind::Lidar, SensorKind::Gps],
            backup_sensor: Some(SensorKind::Gps),
            thresholds: QualityThresholds::default(),
            survey_runs: 3,
        }
    }
}

impl RunSettings {
    pub fn tree_def(&self) -> TreeDef {
        build_experiment_tree(&self.main_sensors, self.backup_sensor)
    }
}

/// Survey drives draw their noise seeds from `map_seed` plus this offset, so
/// the learned map is shared by every evaluated seed of a scenario.
pub const SURVEY_SEED_OFFSET: u64 = 1_000_003;

/// Whether a log entry feeds the location model: GPS fixes audited against a
/// trusted lidar pose, and lidar poses the main filter accepted.
pub fn is_model_entry(e: &LocationLogEntry) -> bool {
    match e.stats.sensor {
        SensorKind::Gps => e.stats.filter == FilterId::Audit,
        SensorKind::Lidar => e.stats.filter == FilterId::Main,
    }
}

pub fn build_location_model<'a>(
    logs: impl IntoIterator<Item = &'a LocationLogEntry>,
    thresholds: &QualityThresholds,
) -> LocationLayer {
    LocationLayer::build(logs.into_iter().filter(|e| is_model_entry(e)), thresholds)
}

/// Builds the scenario's feature map and learns its location layer from
/// `settings.survey_runs` prior drives with fresh seeds.
pub fn survey_map(scenario: &Scenario, settings: &RunSettings) -> Result<MapDb, RunError> {
    let features = FeatureLayer::from_features(generate_map(scenario)?)?;
    let bare = Arc::new(MapDb::new(features.clone(), LocationLayer::default()));
    let mut log = Vec::new();
    for i in 0..settings.survey_runs {
        let mut sc = scenario.clone();
        sc.seed = scenario.map_seed.wrapping_add(SURVEY_SEED_OFFSET + i);
        let out = run_scenario(&sc, Arc::clone(&bare), settings, RunOptions::default())?;
        log.extend(out.location_log);
    }
    Ok(MapDb::new(features, build_location_model(&log, &settings.thresholds)))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: bool,
    /// Operator commands as (time, line).
    pub control: Vec<(Timestamp, String)>,
    pub tree: Option<TreeDef>,
}

/// Simulates `scenario` and localises through it.
pub fn run_scenario(
    scenario: &Scenario,
    map: Arc<MapDb>,
    settings: &RunSettings,
    opts: RunOptions,
) -> Result<RunOutput, RunError> {
    let sim = simulate(scenario)?;
    let end = Timestamp::from_micros((scenario.duration() * 1e6).round() as u64);
    let mut r = Runner::new(scenario.start, map, sim.measurements, end, Some(sim.truth), settings, opts)?;
    r.run_to_end();
    Ok(r.finish())
}

/// The tick loop over one measurement stream.
pub struct Runner {
    pub world: Localiser,
    pub tree: Tree<Localiser>,
    rx: Receiver<Measurement>,
    ingest: Option<JoinHandle<()>>,
    lookahead: Option<Measurement>,
    period_us: u64,
    next_tick: Timestamp,
    end: Timestamp,
    truth: Option<Vec<TruthSample>>,
    ticks: Vec<TickRecord>,
    timing: TimingLog,
    trace: Vec<TraceEntry>,
    tracing: bool,
    control: VecDeque<(Timestamp, String)>,
    stats_cursor: usize,
}

/// What a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ticks: Vec<TickRecord>,
    pub events: Vec<TransitionEvent>,
    pub stats: Vec<UpdateStats>,
    pub location_log: Vec<LocationLogEntry>,
    pub timing: TimingLog,
    pub trace: Vec<TraceEntry>,
}

impl Runner {
    pub fn new(
        start: Pose2D,
        map: Arc<MapDb>,
        measurements: Vec<Measurement>,
        end: Timestamp,
        truth: Option<Vec<TruthSample>>,
        settings: &RunSettings,
        opts: RunOptions,
    ) -> Result<Self, RunError> {
        if settings.tick_period_ms == 0 {
            return Err(RunError::Config("tick period must be positive".into()));
        }
        let [xx, yy, hh] = settings.initial_cov;
        let init = FilterState::initialized(start, Covariance3::diagonal(xx, yy, hh), Timestamp::ZERO, FilterMode::DrOnly);
        let bb = Blackboard::new();
        let mut world = Localiser::new(map, init, init, &settings.localiser, bb.writer());
        let def = opts.tree.unwrap_or_else(|| settings.tree_def());
        let mut tree = instantiate_localiser_tree(&mut world, &def, bb)?;
        if opts.trace {
            tree.enable_trace();
        }
        let (tx, rx) = sync_channel(4096);
        let ingest = thread::spawn(move || {
            for m in measurements {
                if tx.send(m).is_err() {
                    break;
                }
            }
        });
        let mut control: Vec<_> = opts.control;
        control.sort_by_key(|(t, _)| *t);
        Ok(Runner {
            world,
            tree,
            rx,
            ingest: Some(ingest),
            lookahead: None,
            period_us: settings.tick_period_ms * 1000,
            next_tick: Timestamp::ZERO,
            end,
            truth,
            ticks: Vec::new(),
            timing: TimingLog::default(),
            trace: Vec::new(),
            tracing: opts.trace,
            control: control.into(),
            stats_cursor: 0,
        })
    }

    /// Queues an operator command, delivered at the first tick at or after `at`.
    pub fn push_control(&mut self, at: Timestamp, line: impl Into<String>) {
        let pos = self.control.partition_point(|(t, _)| *t <= at);
        self.control.insert(pos, (at, line.into()));
    }

    pub fn ticks(&self) -> &[TickRecord] {
        &self.ticks
    }

    pub fn next_tick_time(&self) -> Timestamp {
        self.next_tick
    }

    pub fn is_done(&self) -> bool {
        self.next_tick > self.end
    }

    fn next_measurement(&mut self, until: Timestamp) -> Option<Measurement> {
        if self.lookahead.is_none() {
            self.lookahead = self.rx.recv().ok();
        }
        if self.lookahead.as_ref().is_some_and(|m| m.timestamp <= until) {
            self.lookahead.take()
        } else {
            None
        }
    }

    fn feed(&mut self, m: Measurement) {
        let w = &mut self.world;
        let source = match m.payload {
            MeasurementPayload::EncoderSpeed { .. } | MeasurementPayload::GyroYawRate { .. } => w.ids.motion_source,
            MeasurementPayload::GpsFix(_) => w.ids.gps_source,
            MeasurementPayload::LidarScan(_) => w.ids.lidar_source,
        };
        let started = Instant::now();
        let (is_gps, is_lidar) = (
            matches!(m.payload, MeasurementPayload::GpsFix(_)),
            matches!(m.payload, MeasurementPayload::LidarScan(_)),
        );
        if is_lidar {
            let prior = w.state(FilterId::Main).pose;
            w.matcher_mut().set_prior(prior);
        }
        let writer = self.tree.blackboard().writer();
        if is_gps {
            writer.publish(topics::GPS_FIX, BbValue::Measurement(m.clone()));
        }
        let t = m.timestamp;
        if let Err(e) = w.pipeline.dispatch(source, Payload::Raw(m)) {
            log::error!("dispatch failed: {e}");
        }
        if is_lidar {
            if let Some((at, result)) = w.matcher_mut().last {
                if at == t {
                    writer.publish(topics::LIDAR_ALIGNMENT, BbValue::Alignment(result));
                }
            }
        }
        let ms = started.elapsed().as_secs_f64() * 1e3;
        if is_gps {
            self.timing.gps_ms.push(ms);
        } else if is_lidar {
            self.timing.lidar_ms.push(ms);
        }
    }

    fn truth_at(&self, t: Timestamp) -> Option<Pose2D> {
        let truth = self.truth.as_ref()?;
        let i = (t.micros() / TRUTH_PERIOD_US) as usize;
        truth.get(i.min(truth.len().saturating_sub(1))).map(|s| s.pose)
    }

    /// Runs one tick. Returns `None` once the run has ended.
    pub fn step(&mut self) -> Option<&TickRecord> {
        if self.is_done() {
            return None;
        }
        let now = self.next_tick;
        while let Some(m) = self.next_measurement(now) {
            self.feed(m);
        }
        let writer = self.tree.blackboard().writer();
        while self.control.front().is_some_and(|(t, _)| *t <= now) {
            let (_, line) = self.control.pop_front().expect("checked non-empty");
            writer.publish(topics::CONTROL, BbValue::Text(line));
        }
        let started = Instant::now();
        self.world.now = now;
        self.tree.tick(&mut self.world);
        self.timing.tick_ms.push(started.elapsed().as_secs_f64() * 1e3);
        if self.tracing {
            self.trace.extend(self.tree.take_trace());
        }
        let records = &self.world.stats().records;
        let backup_gps = records[self.stats_cursor..]
            .iter()
            .rev()
            .find(|s| s.filter == FilterId::Backup && s.sensor == SensorKind::Gps)
            .map(|s| s.outcome);
        self.stats_cursor = records.len();
        let (m, b) = (*self.world.state(FilterId::Main), *self.world.state(FilterId::Backup));
        self.ticks.push(TickRecord {
            t: now,
            main: m.pose,
            main_mode: m.mode,
            main_health: m.health,
            backup: b.pose,
            backup_mode: b.mode,
            backup_health: b.health,
            backup_gps: backup_gps.filter(|o| *o != UpdateOutcome::NotConverged),
            truth: self.truth_at(now),
        });
        self.next_tick = Timestamp(now.micros() + self.period_us);
        self.ticks.last()
    }

    pub fn run_to_end(&mut self) {
        while self.step().is_some() {}
    }

    pub fn finish(mut self) -> RunOutput {
        // drop the receiver first so a still-feeding ingestion thread unblocks
        let Runner { rx, ingest, .. } = &mut self;
        drop(std::mem::replace(rx, sync_channel(0).1));
        if let Some(h) = ingest.take() {
            let _ = h.join();
        }
        let stats = self.world.stats();
        RunOutput {
            stats: stats.records.clone(),
            location_log: stats.location_log.clone(),
            events: self.world.events.clone(),
            ticks: self.ticks,
            timing: self.timing,
            trace: self.trace,
        }
    }
}

impl RunOutput {
    pub fn report(&self) -> Result<RunReport, RunError> {
        Ok(compute_report(&self.ticks, &self.events, &self.stats, None)?)
    }

    pub fn main_ended_lost(&self) -> bool {
        self.ticks
            .last()
            .is_some_and(|t| t.main_health == crate::estimation::Health::Lost)
    }

    /// Writes the logs, report, GeoJSON and timing files into `dir`.
    /// Everything except `timing.json` and the histogram CSVs is a pure
    /// function of the inputs.
    pub fn write_artifacts(&self, dir: &Path) -> Result<RunReport, RunError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_jsonl(&dir.join("events.jsonl"), &self.events)?;
        write_jsonl(&dir.join("stats.jsonl"), &self.stats)?;
        write_jsonl(&dir.join("trajectory.jsonl"), &self.ticks)?;
        write_jsonl(&dir.join("location_log.jsonl"), &self.location_log)?;
        if !self.trace.is_empty() {
            write_jsonl(&dir.join("trace.jsonl"), &self.trace)?;
        }
        let report = self.report()?;
        write_json(&dir.join("report.json"), &report)?;
        for (f, name) in [(FilterId::Main, "main.geojson"), (FilterId::Backup, "backup.geojson")] {
            write_json(&dir.join(name), &export_trajectory(&self.ticks, f)?)?;
        }
        let timing = crate::metrics::TimingSummary::of(&self.timing);
        write_json(&dir.join("timing.json"), &timing)?;
        for (h, name) in [
            (&timing.tick_histogram, "tick_histogram.csv"),
            (&timing.lidar_histogram, "lidar_histogram.csv"),
            (&timing.gps_histogram, "gps_histogram.csv"),
        ] {
            let p = dir.join(name);
            fs::write(&p, h.to_csv()).map_err(io(&p))?;
        }
        Ok(report)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io(path))?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n").map_err(io(path))?;
    }
    f.flush().map_err(io(path))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(RunError::from))
        .collect()
}
