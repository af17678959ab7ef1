//! The localiser: a four-layer graph of typed modules (source, model,
//! kernel, sink) wired by runtime-reconfigurable signal-slot connections.
//!
//! A dispatch delivers one payload depth-first through the connected
//! subgraph. It works on a snapshot of the edges taken when it starts, so
//! topology changes requested by modules while it runs are applied only
//! after it completes.

mod graph;
mod modules;
mod stats;

use serde::{Deserialize, Serialize};

use crate::estimation::{AlignmentResult, FilterState};
use crate::types::{GpsFix, Measurement, Timestamp};

pub use graph::{
    Connection, DispatchSummary, Endpoint, ModuleFactory, ModuleId, ModuleInfo, Pipeline, Topology,
    TopologyRequest,
};
pub use modules::{
    default_factory, BlackboardPublisher, EkfKernel, GpsModel, KernelConfig, LidarMatcher, MotionModel,
    SensorSource, StatsRecorder, TrajectoryRecorder,
};
pub use stats::{FilterId, SensorKind, UpdateOutcome, UpdateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    Source,
    Model,
    Kernel,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PortType {
    RawMeasurement,
    MotionInput,
    Observation,
    StateEstimate,
    UpdateStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: PortType,
}

impl PortSpec {
    pub fn new(name: &str, ty: PortType) -> Self {
        PortSpec {
            name: name.to_string(),
            ty,
        }
    }
}

/// Synchronised dead-reckoning input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionInput {
    pub timestamp: Timestamp,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    Gps { timestamp: Timestamp, fix: GpsFix },
    LidarPose { timestamp: Timestamp, result: AlignmentResult },
}

impl Observation {
    pub fn timestamp(&self) -> Timestamp {
        match self {
            Observation::Gps { timestamp, .. } | Observation::LidarPose { timestamp, .. } => *timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub timestamp: Timestamp,
    pub filter: FilterId,
    pub state: FilterState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raw(Measurement),
    Motion(MotionInput),
    Observation(Observation),
    Estimate(StateEstimate),
    Stats(UpdateStats),
}

impl Payload {
    pub fn port_type(&self) -> PortType {
        match self {
            Payload::Raw(_) => PortType::RawMeasurement,
            Payload::Motion(_) => PortType::MotionInput,
            Payload::Observation(_) => PortType::Observation,
            Payload::Estimate(_) => PortType::StateEstimate,
            Payload::Stats(_) => PortType::UpdateStats,
        }
    }
}

/// Failure inside [`Module::process`]. Kernel failures carrying `stats_context`
/// are turned into NOT_CONVERGED update statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleError {
    pub message: String,
    pub stats_context: Option<UpdateStats>,
}

impl ModuleError {
    pub fn new(message: impl Into<String>) -> Self {
        ModuleError {
            message: message.into(),
            stats_context: None,
        }
    }
}

/// Collects a module's emissions and topology requests during one `process` call.
#[derive(Debug, Default)]
pub struct Outbox {
    pub(crate) emitted: Vec<(String, Payload)>,
    pub(crate) requests: Vec<TopologyRequest>,
}

impl Outbox {
    pub fn emit(&mut self, port: &str, payload: Payload) {
        self.emitted.push((port.to_string(), payload));
    }

    /// Queues a topology change; applied once the current dispatch completes.
    pub fn request(&mut self, r: TopologyRequest) {
        self.requests.push(r);
    }
}

/// A processing module of the localiser.
pub trait Module: std::any::Any {
    /// Factory key used by topology files.
    fn kind(&self) -> &'static str;
    fn layer(&self) -> Layer;
    fn inputs(&self) -> Vec<PortSpec>;
    fn outputs(&self) -> Vec<PortSpec>;
    fn process(&mut self, port: &str, payload: &Payload, out: &mut Outbox) -> Result<(), ModuleError>;
    /// Construction parameters recorded in topology dumps.
    fn params(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
    fn as_any(&self) -> &dyn std::any::Any;
    fn as_any_mut(&mut self) -> &mut dyn std::any::Any;
}
