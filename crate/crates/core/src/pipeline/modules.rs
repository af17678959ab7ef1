use std::any::Any;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    FilterId, Layer, Module, ModuleError, MotionInput, Observation, Outbox, Payload, PortSpec, PortType,
    StateEstimate, UpdateOutcome, UpdateStats,
};
use crate::bt::{BbValue, BlackboardWriter};
use crate::error::PipelineError;
use crate::estimation::{
    align_scan, health_assess, history_gate, predict, update_gps, update_lidar, AlignConfig, AlignmentResult,
    FilterState, GateBound, Health, HealthConfig, LidarPoseNoise, ProcessNoise,
};
use crate::mapdb::{LocationLogEntry, MapDb};
use crate::types::{GpsFix, MeasurementPayload, Pose2D, Timestamp};

macro_rules! any_impl {
    () => {
        fn as_any(&self) -> &dyn Any {
            self
        }
        fn as_any_mut(&mut self) -> &mut dyn Any {
            self
        }
    };
}

/// Entry point for one or more raw measurement streams.
#[derive(Debug, Clone)]
pub struct SensorSource {
    streams: Vec<String>,
}

impl SensorSource {
    pub fn new<S: Into<String>>(streams: impl IntoIterator<Item = S>) -> Self {
        SensorSource {
            streams: streams.into_iter().map(Into::into).collect(),
        }
    }

    pub fn accepts(&self, stream: &str) -> bool {
        self.streams.iter().any(|s| s == stream)
    }
}

impl Module for SensorSource {
    fn kind(&self) -> &'static str {
        "source"
    }
    fn layer(&self) -> Layer {
        Layer::Source
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("in", PortType::RawMeasurement)]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("out", PortType::RawMeasurement)]
    }
    fn process(&mut self, _port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError> {
        match payload {
            Payload::Raw(m) if self.accepts(m.stream()) => {
                out.emit("out", payload.clone());
                Ok(())
            }
            _ => Err(ModuleError::new("source received a payload outside its streams")),
        }
    }
    fn params(&self) -> Value {
        json!({ "streams": self.streams })
    }
    any_impl!();
}

/// Encoder + gyro synchronisation: zero-order hold of the latest gyro rate at each encoder tick.
#[derive(Debug, Clone, Default)]
pub struct MotionModel {
    omega: f64,
}

impl MotionModel {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for MotionModel {
    fn kind(&self) -> &'static str {
        "motion_model"
    }
    fn layer(&self) -> Layer {
        Layer::Model
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("raw", PortType::RawMeasurement)]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("motion", PortType::MotionInput)]
    }
    fn process(&mut self, _port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError> {
        let Payload::Raw(m) = payload else {
            return Err(ModuleError::new("motion model expects raw measurements"));
        };
        match m.payload {
            MeasurementPayload::GyroYawRate { omega, .. } => self.omega = omega,
            MeasurementPayload::EncoderSpeed { v, .. } => out.emit(
                "motion",
                Payload::Motion(MotionInput {
                    timestamp: m.timestamp,
                    v,
                    omega: self.omega,
                }),
            ),
            _ => return Err(ModuleError::new("motion model expects encoder or gyro data")),
        }
        Ok(())
    }
    any_impl!();
}

/// GPS observation model.
#[derive(Debug, Clone, Default)]
pub struct GpsModel {
    pub last_fix: Option<(Timestamp, GpsFix)>,
}

impl GpsModel {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for GpsModel {
    fn kind(&self) -> &'static str {
        "gps_model"
    }
    fn layer(&self) -> Layer {
        Layer::Model
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("raw", PortType::RawMeasurement)]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("obs", PortType::Observation)]
    }
    fn process(&mut self, _port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError> {
        match payload {
            Payload::Raw(m) => match &m.payload {
                MeasurementPayload::GpsFix(fix) => {
                    self.last_fix = Some((m.timestamp, *fix));
                    out.emit(
                        "obs",
                        Payload::Observation(Observation::Gps {
                            timestamp: m.timestamp,
                            fix: *fix,
                        }),
                    );
                    Ok(())
                }
                _ => Err(ModuleError::new("gps model expects GPS fixes")),
            },
            _ => Err(ModuleError::new("gps model expects raw measurements")),
        }
    }
    any_impl!();
}

/// Lidar observation model: aligns each feature scan to the map around a prior pose.
pub struct LidarMatcher {
    map: Arc<MapDb>,
    cfg: AlignConfig,
    range: f64,
    prior: Option<Pose2D>,
    pub last: Option<(Timestamp, AlignmentResult)>,
}

impl LidarMatcher {
    pub fn new(map: Arc<MapDb>, cfg: AlignConfig, range: f64) -> Self {
        LidarMatcher {
            map,
            cfg,
            range,
            prior: None,
            last: None,
        }
    }

    /// Prior pose for the next scan.
    pub fn set_prior(&mut self, pose: Pose2D) {
        self.prior = Some(pose);
    }
}

impl Module for LidarMatcher {
    fn kind(&self) -> &'static str {
        "lidar_matcher"
    }
    fn layer(&self) -> Layer {
        Layer::Model
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("raw", PortType::RawMeasurement)]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("obs", PortType::Observation)]
    }
    fn process(&mut self, _port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError> {
        let Payload::Raw(m) = payload else {
            return Err(ModuleError::new("lidar matcher expects raw measurements"));
        };
        let MeasurementPayload::LidarScan(scan) = &m.payload else {
            return Err(ModuleError::new("lidar matcher expects feature scans"));
        };
        let prior = self.prior.ok_or_else(|| ModuleError::new("no prior pose for alignment"))?;
        let nearby = self
            .map
            .query_features((prior.x, prior.y), self.range + self.cfg.association_radius);
        let result = align_scan(scan, &prior, &nearby, &self.cfg);
        self.last = Some((m.timestamp, result));
        out.emit(
            "obs",
            Payload::Observation(Observation::LidarPose {
                timestamp: m.timestamp,
                result,
            }),
        );
        Ok(())
    }
    fn params(&self) -> Value {
        json!({ "align": self.cfg, "range": self.range })
    }
    any_impl!();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub process: ProcessNoise,
    pub lidar_noise: LidarPoseNoise,
    pub health: HealthConfig,
    /// Lidar history gate tolerance, degrees.
    pub history_tolerance_deg: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            process: ProcessNoise::default(),
            lidar_noise: LidarPoseNoise::default(),
            health: HealthConfig::default(),
            history_tolerance_deg: 10.0,
        }
    }
}

/// EKF localisation kernel. Its `audit` port gates GPS fixes at 3σ
/// against the estimate without fusing them, for building GPS location models.
pub struct EkfKernel {
    pub filter: FilterId,
    pub state: FilterState,
    pub bound: GateBound,
    cfg: KernelConfig,
    map: Option<Arc<MapDb>>,
    last_motion: Option<Timestamp>,
    /// Distance dead-reckoned since the last accepted update.
    pub dr_distance: f64,
    recent: VecDeque<UpdateStats>,
    pub now: Timestamp,
}

impl EkfKernel {
    pub fn new(filter: FilterId, state: FilterState, cfg: KernelConfig, map: Option<Arc<MapDb>>) -> Self {
        EkfKernel {
            filter,
            now: state.last_update_time,
            state,
            bound: GateBound::TwoSigma,
            cfg,
            map,
            last_motion: None,
            dr_distance: 0.0,
            recent: VecDeque::new(),
        }
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    /// Decision records from the last health window.
    pub fn recent(&self) -> impl Iterator<Item = &UpdateStats> {
        self.recent.iter()
    }

    fn record(&mut self, stats: &UpdateStats) {
        if stats.outcome == UpdateOutcome::Accepted {
            self.dr_distance = 0.0;
        }
        self.recent.push_back(stats.clone());
        let w = self.cfg.health.window_secs;
        while self.recent.front().is_some_and(|s| stats.timestamp.secs_since(s.timestamp) > w) {
            self.recent.pop_front();
        }
    }

    /// Recomputes and stores the filter's health at `now`.
    pub fn assess_health(&mut self, now: Timestamp) -> Health {
        let recent: Vec<_> = self.recent.iter().cloned().collect();
        self.state.health = health_assess(&self.state, &recent, now, self.dr_distance, &self.cfg.health);
        self.state.health
    }

    /// Replaces the estimate (initialisation and resets).
    pub fn overwrite(&mut self, state: FilterState) {
        self.state = state;
        self.dr_distance = 0.0;
    }

    fn emit_result(&self, out: &mut Outbox, stats: UpdateStats) {
        out.emit(
            "estimate",
            Payload::Estimate(StateEstimate {
                timestamp: stats.timestamp,
                filter: self.filter,
                state: self.state,
            }),
        );
        out.emit("stats", Payload::Stats(stats));
    }

    fn stale(&self, at: Timestamp) -> Option<ModuleError> {
        let last = self.last_motion?;
        (at < last).then(|| ModuleError {
            message: format!("observation at {at} predates motion at {last}"),
            stats_context: None,
        })
    }
}

impl Module for EkfKernel {
    fn kind(&self) -> &'static str {
        "ekf"
    }
    fn layer(&self) -> Layer {
        Layer::Kernel
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::new("motion", PortType::MotionInput),
            PortSpec::new("gps", PortType::Observation),
            PortSpec::new("lidar", PortType::Observation),
            PortSpec::new("audit", PortType::Observation),
        ]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::new("estimate", PortType::StateEstimate),
            PortSpec::new("stats", PortType::UpdateStats),
        ]
    }
    fn process(&mut self, port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError> {
        match (port, payload) {
            ("motion", Payload::Motion(mi)) => {
                self.now = self.now.max(mi.timestamp);
                let Some(prev) = self.last_motion.replace(mi.timestamp) else {
                    return Ok(());
                };
                if !self.state.is_initialized() {
                    return Ok(());
                }
                let dt = mi.timestamp.secs_since(prev);
                self.state = predict(&self.state, mi.v, mi.omega, dt, &self.cfg.process)
                    .map_err(|e| ModuleError::new(e.to_string()))?;
                self.dr_distance += mi.v.abs() * dt;
                out.emit(
                    "estimate",
                    Payload::Estimate(StateEstimate {
                        timestamp: mi.timestamp,
                        filter: self.filter,
                        state: self.state,
                    }),
                );
                Ok(())
            }
            ("gps", Payload::Observation(Observation::Gps { timestamp, fix })) => {
                if let Some(mut e) = self.stale(*timestamp) {
                    e.stats_context = Some(UpdateStats::not_converged(
                        *timestamp,
                        super::SensorKind::Gps,
                        self.filter,
                        self.bound,
                    ));
                    return Err(e);
                }
                let (next, stats) = update_gps(&self.state, fix, *timestamp, self.bound, self.filter);
                self.state = next;
                self.record(&stats);
                self.emit_result(out, stats);
                Ok(())
            }
            ("lidar", Payload::Observation(Observation::LidarPose { timestamp, result })) => {
                if let Some(mut e) = self.stale(*timestamp) {
                    e.stats_context = Some(UpdateStats::not_converged(
                        *timestamp,
                        super::SensorKind::Lidar,
                        self.filter,
                        self.bound,
                    ));
                    return Err(e);
                }
                let passed = match (&self.map, result.converged) {
                    (Some(map), true) => history_gate(
                        result.pose.heading,
                        &map.query_lidar_history((result.pose.x, result.pose.y)),
                        self.cfg.history_tolerance_deg.to_radians(),
                    ),
                    _ => true,
                };
                let (next, stats) = update_lidar(
                    &self.state,
                    result,
                    *timestamp,
                    self.bound,
                    passed,
                    &self.cfg.lidar_noise,
                    self.filter,
                );
                self.state = next;
                self.record(&stats);
                self.emit_result(out, stats);
                Ok(())
            }
            ("audit", Payload::Observation(Observation::Gps { timestamp, fix })) => {
                let trusted = self.state.mode == crate::estimation::FilterMode::LidarDr
                    && self.state.health == Health::Good;
                if fix.has_fix() && !trusted {
                    return Ok(());
                }
                let (_, mut stats) = update_gps(&self.state, fix, *timestamp, GateBound::ThreeSigma, FilterId::Audit);
                stats.correction = None;
                out.emit("stats", Payload::Stats(stats));
                Ok(())
            }
            _ => Err(ModuleError::new(format!("kernel cannot handle payload on port `{port}`"))),
        }
    }
    fn params(&self) -> Value {
        json!({ "filter": self.filter, "state": self.state, "config": self.cfg })
    }
    any_impl!();
}

/// Records every update statistic together with the pose of the filter that produced it.
#[derive(Debug, Clone, Default)]
pub struct StatsRecorder {
    pub records: Vec<UpdateStats>,
    pub location_log: Vec<LocationLogEntry>,
    latest: BTreeMap<FilterId, Pose2D>,
}

impl StatsRecorder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for StatsRecorder {
    fn kind(&self) -> &'static str {
        "stats_recorder"
    }
    fn layer(&self) -> Layer {
        Layer::Sink
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::new("stats", PortType::UpdateStats),
            PortSpec::new("estimate", PortType::StateEstimate),
        ]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        Vec::new()
    }
    fn process(&mut self, _port: &str, payload: &Payload, _out: &mut Outbox) -> Result<(), ModuleError> {
        match payload {
            Payload::Estimate(e) => {
                self.latest.insert(e.filter, e.state.pose);
            }
            Payload::Stats(s) => {
                let owner = if s.filter == FilterId::Audit { FilterId::Main } else { s.filter };
                if let Some(pose) = self.latest.get(&owner) {
                    self.location_log.push(LocationLogEntry {
                        pose: *pose,
                        stats: s.clone(),
                    });
                }
                self.records.push(s.clone());
            }
            _ => return Err(ModuleError::new("stats recorder expects stats or estimates")),
        }
        Ok(())
    }
    any_impl!();
}

/// Forwards statistics and estimates to the behavior tree's blackboard as
/// topics `stats/<filter>` and `estimate/<filter>`.
pub struct BlackboardPublisher {
    writer: BlackboardWriter,
}

impl BlackboardPublisher {
    pub fn new(writer: BlackboardWriter) -> Self {
        BlackboardPublisher { writer }
    }

    pub fn stats_topic(filter: FilterId) -> String {
        format!("stats/{}", filter_key(filter))
    }

    pub fn estimate_topic(filter: FilterId) -> String {
        format!("estimate/{}", filter_key(filter))
    }
}

fn filter_key(f: FilterId) -> &'static str {
    match f {
        FilterId::Main => "main",
        FilterId::Backup => "backup",
        FilterId::Audit => "audit",
    }
}

impl Module for BlackboardPublisher {
    fn kind(&self) -> &'static str {
        "blackboard_publisher"
    }
    fn layer(&self) -> Layer {
        Layer::Sink
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::new("stats", PortType::UpdateStats),
            PortSpec::new("estimate", PortType::StateEstimate),
        ]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        Vec::new()
    }
    fn process(&mut self, _port: &str, payload: &Payload, _out: &mut Outbox) -> Result<(), ModuleError> {
        match payload {
            Payload::Stats(s) => self.writer.publish(Self::stats_topic(s.filter), BbValue::Stats(s.clone())),
            Payload::Estimate(e) => self
                .writer
                .publish(Self::estimate_topic(e.filter), BbValue::Pose(e.state.pose)),
            _ => return Err(ModuleError::new("blackboard publisher expects stats or estimates")),
        }
        Ok(())
    }
    any_impl!();
}

/// Keeps the latest estimate of each filter and a count of estimates seen.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub latest: BTreeMap<FilterId, StateEstimate>,
    pub received: usize,
}

impl TrajectoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for TrajectoryRecorder {
    fn kind(&self) -> &'static str {
        "trajectory_recorder"
    }
    fn layer(&self) -> Layer {
        Layer::Sink
    }
    fn inputs(&self) -> Vec<PortSpec> {
        vec![PortSpec::new("estimate", PortType::StateEstimate)]
    }
    fn outputs(&self) -> Vec<PortSpec> {
        Vec::new()
    }
    fn process(&mut self, _port: &str, payload: &Payload, _out: &mut Outbox) -> Result<(), ModuleError> {
        let Payload::Estimate(e) = payload else {
            return Err(ModuleError::new("trajectory recorder expects estimates"));
        };
        self.received += 1;
        self.latest.insert(e.filter, e.clone());
        Ok(())
    }
    any_impl!();
}

/// Builds the modules that need no runtime handles (map, blackboard) from topology params.
pub fn default_factory(kind: &str, params: &Value) -> Result<Box<dyn Module>, PipelineError> {
    let bad = |what: &str| PipelineError::UnknownKind(format!("{kind}: {what}"));
    Ok(match kind {
        "source" => {
            let streams: Vec<String> =
                serde_json::from_value(params["streams"].clone()).map_err(|e| bad(&e.to_string()))?;
            Box::new(SensorSource::new(streams))
        }
        "motion_model" => Box::new(MotionModel::new()),
        "gps_model" => Box::new(GpsModel::new()),
        "stats_recorder" => Box::new(StatsRecorder::new()),
        "trajectory_recorder" => Box::new(TrajectoryRecorder::new()),
        "ekf" => {
            let filter: FilterId =
                serde_json::from_value(params["filter"].clone()).map_err(|e| bad(&e.to_string()))?;
            let state: FilterState =
                serde_json::from_value(params["state"].clone()).map_err(|e| bad(&e.to_string()))?;
            let cfg: KernelConfig =
                serde_json::from_value(params["config"].clone()).map_err(|e| bad(&e.to_string()))?;
            Box::new(EkfKernel::new(filter, state, cfg, None))
        }
        other => return Err(PipelineError::UnknownKind(other.to_string())),
    })
}
