use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ladder::LadderState;
use super::BehaviorConfig;
use crate::bt::{BlackboardWriter, IdGen, LeafRegistry, NodeId, TreeDef};
use crate::estimation::{AlignConfig, FilterMode, FilterState, Health, LossRecovery};
use crate::mapdb::MapDb;
use crate::pipeline::{
    BlackboardPublisher, Connection, EkfKernel, FilterId, GpsModel, KernelConfig, LidarMatcher, ModuleId,
    MotionModel, Pipeline, SensorKind, SensorSource, StatsRecorder, TrajectoryRecorder,
};
use crate::types::{Pose2D, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SensorSwitch,
    LossRecovery,
}

/// A main-filter mode change or a reset. `from_mode != to_mode` for switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub timestamp: Timestamp,
    pub kind: EventKind,
    pub from_mode: FilterMode,
    pub to_mode: FilterMode,
    pub jump_distance: f64,
}

/// Numerical and behavioral settings of a [`Localiser`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocaliserConfig {
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default = "default_lidar_range")]
    pub lidar_range: f64,
    #[serde(default)]
    pub behavior: BehaviorConfig,
}

fn default_lidar_range() -> f64 {
    50.0
}

impl Default for LocaliserConfig {
    fn default() -> Self {
        LocaliserConfig {
            kernel: KernelConfig::default(),
            align: AlignConfig::default(),
            lidar_range: default_lidar_range(),
            behavior: BehaviorConfig::default(),
        }
    }
}

/// Pipeline module handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleIds {
    pub motion_source: ModuleId,
    pub gps_source: ModuleId,
    pub lidar_source: ModuleId,
    pub motion_model: ModuleId,
    pub gps_model: ModuleId,
    pub lidar_matcher: ModuleId,
    pub main: ModuleId,
    pub backup: ModuleId,
    pub stats: ModuleId,
    pub publisher: ModuleId,
    pub trajectory: ModuleId,
}

/// Per sensor-and-filter state owned by one sensor subtree. Lives in the
/// world rather than the blackboard so halt and teardown hooks can clear it.
#[derive(Debug, Clone, Default)]
pub(crate) struct SensorSlot {
    pub ladder: LadderState,
    pub connected_at: Option<Timestamp>,
    /// Run of fixes consistent with the main filter, and the tick it was last extended.
    pub consistent_fixes: usize,
    pub counted_tick: Option<u64>,
    /// Ladder verdict cached for the tick in `ladder.evaluated_tick`.
    pub failed: bool,
}

/// Hysteresis state of the GPS-context gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ContextGate {
    pub available: bool,
    pub streak: u32,
}

impl Default for ContextGate {
    fn default() -> Self {
        ContextGate {
            available: true,
            streak: 0,
        }
    }
}

/// Where a named subtree sits in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSlot {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub index: usize,
}

/// The world the behavior tree acts upon: the localiser pipeline, both
/// filters, the map and the run's event log.
pub struct Localiser {
    pub pipeline: Pipeline,
    pub ids: ModuleIds,
    pub map: Arc<MapDb>,
    pub cfg: BehaviorConfig,
    /// Tick time, set by the driver before each tick.
    pub now: Timestamp,
    pub events: Vec<TransitionEvent>,
    pub recoveries: Vec<LossRecovery>,
    pub(crate) slots: BTreeMap<(SensorKind, FilterId), SensorSlot>,
    pub(crate) context: ContextGate,
    /// Event index waiting for the first accepted update after a switch.
    pub(crate) pending_jump: Option<usize>,
    pub(crate) registry: Option<Rc<LeafRegistry<Localiser>>>,
    pub(crate) tree_def: Option<TreeDef>,
    pub(crate) node_index: BTreeMap<String, NodeSlot>,
    pub(crate) id_gen: IdGen,
    /// Subtrees removed by the context gate, with their former slots.
    pub(crate) pruned: BTreeMap<String, NodeSlot>,
}

impl Localiser {
    /// Builds the pipeline with its fixed wiring. Sensor observation paths
    /// into the filters start disconnected; the behavior tree owns them.
    pub fn new(
        map: Arc<MapDb>,
        main: FilterState,
        backup: FilterState,
        setup: &LocaliserConfig,
        writer: BlackboardWriter,
    ) -> Self {
        let kernel_cfg = setup.kernel;
        let mut p = Pipeline::new();
        let ids = ModuleIds {
            motion_source: p.add_module(Box::new(SensorSource::new(["gyro", "encoder"]))),
            gps_source: p.add_module(Box::new(SensorSource::new(["gps"]))),
            lidar_source: p.add_module(Box::new(SensorSource::new(["lidar"]))),
            motion_model: p.add_module(Box::new(MotionModel::new())),
            gps_model: p.add_module(Box::new(GpsModel::new())),
            lidar_matcher: p.add_module(Box::new(LidarMatcher::new(Arc::clone(&map), setup.align, setup.lidar_range))),
            main: p.add_module(Box::new(EkfKernel::new(FilterId::Main, main, kernel_cfg, Some(Arc::clone(&map))))),
            backup: p.add_module(Box::new(EkfKernel::new(FilterId::Backup, backup, kernel_cfg, None))),
            stats: p.add_module(Box::new(StatsRecorder::new())),
            publisher: p.add_module(Box::new(BlackboardPublisher::new(writer))),
            trajectory: p.add_module(Box::new(TrajectoryRecorder::new())),
        };
        let fixed = [
            Connection::new(ids.motion_source, "out", ids.motion_model, "raw"),
            Connection::new(ids.gps_source, "out", ids.gps_model, "raw"),
            Connection::new(ids.lidar_source, "out", ids.lidar_matcher, "raw"),
            Connection::new(ids.motion_model, "motion", ids.main, "motion"),
            Connection::new(ids.motion_model, "motion", ids.backup, "motion"),
            Connection::new(ids.gps_model, "obs", ids.main, "audit"),
        ];
        for c in fixed {
            p.connect(c).expect("fixed localiser wiring is valid");
        }
        for k in [ids.main, ids.backup] {
            for sink in [ids.stats, ids.publisher, ids.trajectory] {
                p.connect(Connection::new(k, "estimate", sink, "estimate"))
                    .expect("fixed localiser wiring is valid");
            }
            for sink in [ids.stats, ids.publisher] {
                p.connect(Connection::new(k, "stats", sink, "stats"))
                    .expect("fixed localiser wiring is valid");
            }
        }
        Localiser {
            pipeline: p,
            ids,
            map,
            cfg: setup.behavior,
            now: Timestamp::ZERO,
            events: Vec::new(),
            recoveries: Vec::new(),
            slots: BTreeMap::new(),
            context: ContextGate::default(),
            pending_jump: None,
            registry: None,
            tree_def: None,
            node_index: BTreeMap::new(),
            id_gen: IdGen::starting_at(0),
            pruned: BTreeMap::new(),
        }
    }

    pub fn kernel_id(&self, f: FilterId) -> ModuleId {
        match f {
            FilterId::Backup => self.ids.backup,
            FilterId::Main | FilterId::Audit => self.ids.main,
        }
    }

    pub fn kernel(&self, f: FilterId) -> &EkfKernel {
        self.pipeline
            .get::<EkfKernel>(self.kernel_id(f))
            .expect("localiser kernels are never removed")
    }

    pub fn kernel_mut(&mut self, f: FilterId) -> &mut EkfKernel {
        let id = self.kernel_id(f);
        self.pipeline
            .get_mut::<EkfKernel>(id)
            .expect("localiser kernels are never removed")
    }

    pub fn state(&self, f: FilterId) -> &FilterState {
        &self.kernel(f).state
    }

    pub fn main_mode(&self) -> FilterMode {
        self.state(FilterId::Main).mode
    }

    pub fn stats(&self) -> &StatsRecorder {
        self.pipeline.get(self.ids.stats).expect("stats recorder present")
    }

    pub fn matcher_mut(&mut self) -> &mut LidarMatcher {
        let id = self.ids.lidar_matcher;
        self.pipeline.get_mut(id).expect("lidar matcher present")
    }

    /// Observation edge for `sensor` into filter `f`.
    pub fn sensor_path(&self, sensor: SensorKind, f: FilterId) -> Connection {
        match sensor {
            SensorKind::Gps => Connection::new(self.ids.gps_model, "obs", self.kernel_id(f), "gps"),
            SensorKind::Lidar => Connection::new(self.ids.lidar_matcher, "obs", self.kernel_id(f), "lidar"),
        }
    }

    pub fn sensor_connected(&self, sensor: SensorKind, f: FilterId) -> bool {
        self.pipeline.is_connected(&self.sensor_path(sensor, f))
    }

    /// Connects `sensor` into `f`. On the main filter the other sensor is disconnected first.
    pub fn connect_sensor(&mut self, sensor: SensorKind, f: FilterId) {
        if f == FilterId::Main {
            let other = match sensor {
                SensorKind::Gps => SensorKind::Lidar,
                SensorKind::Lidar => SensorKind::Gps,
            };
            let c = self.sensor_path(other, f);
            self.pipeline.ensure_disconnected(&c);
        }
        let c = self.sensor_path(sensor, f);
        self.pipeline
            .ensure_connected(c)
            .expect("sensor paths are type- and layer-correct");
    }

    pub fn disconnect_sensor(&mut self, sensor: SensorKind, f: FilterId) {
        let c = self.sensor_path(sensor, f);
        self.pipeline.ensure_disconnected(&c);
    }

    /// Records a main-filter mode change as a SENSOR_SWITCH event.
    pub fn set_main_mode(&mut self, mode: FilterMode) {
        let from = self.main_mode();
        if from == mode {
            return;
        }
        let now = self.now;
        self.kernel_mut(FilterId::Main).state.mode = mode;
        self.events.push(TransitionEvent {
            timestamp: now,
            kind: EventKind::SensorSwitch,
            from_mode: from,
            to_mode: mode,
            jump_distance: 0.0,
        });
        self.pending_jump = match mode {
            FilterMode::LidarDr | FilterMode::GpsDr => Some(self.events.len() - 1),
            _ => None,
        };
    }

    /// Overwrites the main filter and logs a LOSS_RECOVERY event.
    pub fn reset_main(&mut self, target: Pose2D, cov: crate::types::Covariance3) {
        let now = self.now;
        let kernel = self.kernel_mut(FilterId::Main);
        let (mut next, recovery) = crate::estimation::reset(&kernel.state, target, cov, now);
        next.mode = kernel.state.mode;
        kernel.overwrite(next);
        let mode = next.mode;
        self.recoveries.push(recovery);
        self.events.push(TransitionEvent {
            timestamp: now,
            kind: EventKind::LossRecovery,
            from_mode: mode,
            to_mode: mode,
            jump_distance: recovery.jump_distance,
        });
    }

    pub fn health(&self, f: FilterId) -> Health {
        self.state(f).health
    }

    pub fn node_slot(&self, name: &str) -> Option<NodeSlot> {
        self.node_index.get(name).copied()
    }

    /// Ladder state of one sensor subtree, if it has run.
    pub fn ladder(&self, sensor: SensorKind, f: FilterId) -> Option<&LadderState> {
        self.slots.get(&(sensor, f)).map(|s| &s.ladder)
    }

    pub(crate) fn slot_mut(&mut self, sensor: SensorKind, f: FilterId) -> &mut SensorSlot {
        self.slots.entry((sensor, f)).or_default()
    }

    /// Drops a sensor from a filter and forgets everything its subtree knew.
    pub(crate) fn release(&mut self, sensor: SensorKind, f: FilterId) {
        self.disconnect_sensor(sensor, f);
        self.slots.remove(&(sensor, f));
    }

    /// Whether GPS is currently mapped as usable at all around the main filter.
    pub fn gps_context_available(&self) -> bool {
        self.context.available
    }
}
