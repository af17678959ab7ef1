use std::collections::{BTreeMap, HashSet};
use std::fmt;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{Layer, Module, Outbox, Payload, PortSpec, PortType};
use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(pub u32);

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub module: ModuleId,
    pub port: String,
}

impl Endpoint {
    pub fn new(module: ModuleId, port: &str) -> Self {
        Endpoint {
            module,
            port: port.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Connection {
    pub from: Endpoint,
    pub to: Endpoint,
}

impl Connection {
    pub fn new(from: ModuleId, from_port: &str, to: ModuleId, to_port: &str) -> Self {
        Connection {
            from: Endpoint::new(from, from_port),
            to: Endpoint::new(to, to_port),
        }
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} -> {}.{}", self.from.module, self.from.port, self.to.module, self.to.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyRequest {
    Connect(Connection),
    Disconnect(Connection),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispatchSummary {
    /// Number of `process` calls made.
    pub deliveries: usize,
    /// Module failures absorbed during the dispatch.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleInfo {
    pub id: ModuleId,
    pub kind: String,
    pub layer: Layer,
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Serializable pipeline layout: modules, ports and edges in subscription order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub modules: Vec<ModuleInfo>,
    pub edges: Vec<Connection>,
}

/// Builds a module from a topology entry's kind and params.
pub type ModuleFactory<'a> = dyn Fn(&str, &serde_json::Value) -> Result<Box<dyn Module>, PipelineError> + 'a;

struct Slot {
    module: Box<dyn Module>,
    layer: Layer,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
}

/// Module graph. Edges are kept in global subscription order, so the
/// subscribers of one output port are served in the order they connected.
#[derive(Default)]
pub struct Pipeline {
    slots: BTreeMap<ModuleId, Slot>,
    edges: Vec<Connection>,
    next_id: u32,
    pending: Vec<TopologyRequest>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("modules", &self.slots.keys().collect::<Vec<_>>())
            .field("edges", &self.edges)
            .finish()
    }
}

fn layer_step_ok(from: Layer, to: Layer, ty: PortType) -> bool {
    matches!(
        (from, to),
        (Layer::Source, Layer::Model) | (Layer::Model, Layer::Kernel) | (Layer::Kernel, Layer::Sink)
    ) || (from == Layer::Source && to == Layer::Kernel && ty == PortType::MotionInput)
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_module(&mut self, module: Box<dyn Module>) -> ModuleId {
        while self.slots.contains_key(&ModuleId(self.next_id)) {
            self.next_id += 1;
        }
        let id = ModuleId(self.next_id);
        self.next_id += 1;
        self.insert_slot(id, module);
        id
    }

    pub fn add_module_with_id(&mut self, id: ModuleId, module: Box<dyn Module>) -> Result<(), PipelineError> {
        if self.slots.contains_key(&id) {
            return Err(PipelineError::DuplicateModule(id.0));
        }
        self.insert_slot(id, module);
        Ok(())
    }

    fn insert_slot(&mut self, id: ModuleId, module: Box<dyn Module>) {
        let slot = Slot {
            layer: module.layer(),
            inputs: module.inputs(),
            outputs: module.outputs(),
            module,
        };
        self.slots.insert(id, slot);
    }

    /// Removes a module together with every edge touching it.
    pub fn remove_module(&mut self, id: ModuleId) -> Result<Box<dyn Module>, PipelineError> {
        let slot = self.slots.remove(&id).ok_or(PipelineError::UnknownModule(id.0))?;
        self.edges.retain(|c| c.from.module != id && c.to.module != id);
        Ok(slot.module)
    }

    pub fn contains(&self, id: ModuleId) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn module_ids(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.slots.keys().copied()
    }

    pub fn module(&self, id: ModuleId) -> Option<&dyn Module> {
        self.slots.get(&id).map(|s| s.module.as_ref())
    }

    pub fn module_mut(&mut self, id: ModuleId) -> Option<&mut dyn Module> {
        self.slots.get_mut(&id).map(|s| s.module.as_mut())
    }

    /// Typed access to a module.
    pub fn get<T: Module>(&self, id: ModuleId) -> Option<&T> {
        self.slots.get(&id)?.module.as_any().downcast_ref()
    }

    pub fn get_mut<T: Module>(&mut self, id: ModuleId) -> Option<&mut T> {
        self.slots.get_mut(&id)?.module.as_any_mut().downcast_mut()
    }

    pub fn edges(&self) -> &[Connection] {
        &self.edges
    }

    pub fn is_connected(&self, c: &Connection) -> bool {
        self.edges.contains(c)
    }

    fn port_type(&self, ep: &Endpoint, output: bool) -> Result<(Layer, PortType), PipelineError> {
        let slot = self.slots.get(&ep.module).ok_or(PipelineError::UnknownModule(ep.module.0))?;
        let ports = if output { &slot.outputs } else { &slot.inputs };
        ports
            .iter()
            .find(|p| p.name == ep.port)
            .map(|p| (slot.layer, p.ty))
            .ok_or_else(|| PipelineError::UnknownPort {
                module: ep.module.0,
                port: ep.port.clone(),
                direction: if output { "output" } else { "input" },
            })
    }

    fn reaches(&self, from: ModuleId, target: ModuleId) -> bool {
        let mut stack = vec![from];
        let mut seen = HashSet::new();
        while let Some(m) = stack.pop() {
            if m == target {
                return true;
            }
            if seen.insert(m) {
                stack.extend(self.edges.iter().filter(|c| c.from.module == m).map(|c| c.to.module));
            }
        }
        false
    }

    /// Validates and adds an edge. Returns `Ok(false)` for an already present edge.
    pub fn connect(&mut self, c: Connection) -> Result<bool, PipelineError> {
        let (from_layer, from_ty) = self.port_type(&c.from, true)?;
        let (to_layer, to_ty) = self.port_type(&c.to, false)?;
        if from_ty != to_ty {
            return Err(PipelineError::TypeMismatch { from: from_ty, to: to_ty });
        }
        if self.edges.contains(&c) {
            warn!("connection {c} already present");
            return Ok(false);
        }
        if !layer_step_ok(from_layer, to_layer, from_ty) {
            return Err(PipelineError::LayerOrder(c.to_string()));
        }
        if self.reaches(c.to.module, c.from.module) {
            return Err(PipelineError::Cycle(c.to_string()));
        }
        debug!("connect {c}");
        self.edges.push(c);
        Ok(true)
    }

    pub fn disconnect(&mut self, c: &Connection) -> Result<(), PipelineError> {
        let pos = self
            .edges
            .iter()
            .position(|e| e == c)
            .ok_or_else(|| PipelineError::UnknownConnection(c.to_string()))?;
        debug!("disconnect {c}");
        self.edges.remove(pos);
        Ok(())
    }

    /// Disconnects if present; returns whether an edge was removed.
    pub fn ensure_disconnected(&mut self, c: &Connection) -> bool {
        self.disconnect(c).is_ok()
    }

    /// Connects if absent.
    pub fn ensure_connected(&mut self, c: Connection) -> Result<(), PipelineError> {
        if !self.edges.contains(&c) {
            self.connect(c)?;
        }
        Ok(())
    }

    /// Feeds `payload` to module `source` and propagates emissions depth-first.
    pub fn dispatch(&mut self, source: ModuleId, payload: Payload) -> Result<DispatchSummary, PipelineError> {
        let port = {
            let slot = self.slots.get(&source).ok_or(PipelineError::UnknownModule(source.0))?;
            slot.inputs
                .iter()
                .find(|p| p.ty == payload.port_type())
                .map(|p| p.name.clone())
                .ok_or_else(|| PipelineError::UnknownPort {
                    module: source.0,
                    port: format!("{:?}", payload.port_type()),
                    direction: "input",
                })?
        };
        let snapshot = self.edges.clone();
        let mut summary = DispatchSummary::default();
        self.deliver(source, &port, &payload, &snapshot, &mut summary);
        self.apply_pending();
        Ok(summary)
    }

    fn deliver(
        &mut self,
        id: ModuleId,
        port: &str,
        payload: &Payload,
        edges: &[Connection],
        summary: &mut DispatchSummary,
    ) {
        let Some(slot) = self.slots.get_mut(&id) else {
            return;
        };
        let mut out = Outbox::default();
        summary.deliveries += 1;
        if let Err(e) = slot.module.process(port, payload, &mut out) {
            summary.failures += 1;
            match (slot.layer, e.stats_context) {
                (Layer::Kernel, Some(stats)) => {
                    warn!("kernel {id} failed: {}; reporting NOT_CONVERGED", e.message);
                    if let Some(p) = slot.outputs.iter().find(|p| p.ty == PortType::UpdateStats) {
                        out.emit(&p.name.clone(), Payload::Stats(stats));
                    }
                }
                _ => warn!("module {id} dropped a payload: {}", e.message),
            }
        }
        self.pending.append(&mut out.requests);
        for (out_port, p) in out.emitted {
            for c in edges.iter().filter(|c| c.from.module == id && c.from.port == out_port) {
                self.deliver(c.to.module, &c.to.port, &p, edges, summary);
            }
        }
    }

    /// Applies topology requests queued by modules; invalid requests are logged and dropped.
    pub fn apply_pending(&mut self) {
        for r in std::mem::take(&mut self.pending) {
            let res = match r {
                TopologyRequest::Connect(c) => self.connect(c).map(|_| ()),
                TopologyRequest::Disconnect(c) => self.disconnect(&c),
            };
            if let Err(e) = res {
                warn!("queued topology change failed: {e}");
            }
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            modules: self
                .slots
                .iter()
                .map(|(id, s)| ModuleInfo {
                    id: *id,
                    kind: s.module.kind().to_string(),
                    layer: s.layer,
                    inputs: s.inputs.clone(),
                    outputs: s.outputs.clone(),
                    params: s.module.params(),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }

    /// Rebuilds a pipeline from a topology dump using `factory` for the modules.
    pub fn from_topology(topo: &Topology, factory: &ModuleFactory<'_>) -> Result<Pipeline, PipelineError> {
        let mut p = Pipeline::new();
        for m in &topo.modules {
            p.add_module_with_id(m.id, factory(&m.kind, &m.params)?)?;
        }
        p.next_id = topo.modules.iter().map(|m| m.id.0 + 1).max().unwrap_or(0);
        for c in &topo.edges {
            p.connect(c.clone())?;
        }
        Ok(p)
    }
}
