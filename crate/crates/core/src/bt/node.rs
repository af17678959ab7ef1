use std::fmt;

use serde::{Deserialize, Serialize};

use super::blackboard::Blackboard;
use crate::error::LeafError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hands out unique node ids.
#[derive(Debug, Clone, Default)]
pub struct IdGen {
    next: u32,
}

impl IdGen {
    pub fn starting_at(next: u32) -> Self {
        IdGen { next }
    }

    pub fn next_id(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Sequence,
    Selector,
    Parallel,
    Condition,
    Action,
}

impl NodeKind {
    pub fn is_composite(&self) -> bool {
        matches!(self, NodeKind::Sequence | NodeKind::Selector | NodeKind::Parallel)
    }
}

pub type LeafFn<W> = Box<dyn FnMut(&mut TickCtx<'_, W>) -> Result<NodeStatus, LeafError>>;
pub type Hook<W> = Box<dyn FnMut(&mut W)>;

/// Structural edit queued for the next tick boundary.
pub enum TreeEdit<W> {
    Insert {
        parent: NodeId,
        index: usize,
        subtree: Node<W>,
    },
    Prune(NodeId),
    Reorder {
        parent: NodeId,
        permutation: Vec<usize>,
    },
}

/// What a leaf sees while it is being ticked.
pub struct TickCtx<'a, W> {
    pub world: &'a mut W,
    pub blackboard: &'a mut Blackboard,
    pub tick_index: u64,
    pub(crate) edits: &'a mut Vec<TreeEdit<W>>,
}

impl<'a, W> TickCtx<'a, W> {
    pub fn new(
        world: &'a mut W,
        blackboard: &'a mut Blackboard,
        tick_index: u64,
        edits: &'a mut Vec<TreeEdit<W>>,
    ) -> Self {
        TickCtx {
            world,
            blackboard,
            tick_index,
            edits,
        }
    }

    pub fn request_insert(&mut self, parent: NodeId, index: usize, subtree: Node<W>) {
        self.edits.push(TreeEdit::Insert {
            parent,
            index,
            subtree,
        });
    }

    pub fn request_prune(&mut self, id: NodeId) {
        self.edits.push(TreeEdit::Prune(id));
    }

    pub fn request_reorder(&mut self, parent: NodeId, permutation: Vec<usize>) {
        self.edits.push(TreeEdit::Reorder {
            parent,
            permutation,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick_index: u64,
    pub node_id: NodeId,
    pub status: NodeStatus,
}

/// Id, name, kind and children of a node, without callbacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeShape {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub children: Vec<NodeShape>,
}

pub struct Node<W> {
    id: NodeId,
    name: String,
    kind: NodeKind,
    children: Vec<Node<W>>,
    leaf: Option<LeafFn<W>>,
    on_halt: Option<Hook<W>>,
    on_teardown: Option<Hook<W>>,
    binding: Option<String>,
    last_status: Option<NodeStatus>,
}

impl<W> fmt::Debug for Node<W> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("children", &self.children)
            .finish()
    }
}

impl<W> Node<W> {
    fn composite(id: NodeId, name: impl Into<String>, kind: NodeKind, children: Vec<Node<W>>) -> Self {
        Node {
            id,
            name: name.into(),
            kind,
            children,
            leaf: None,
            on_halt: None,
            on_teardown: None,
            binding: None,
            last_status: None,
        }
    }

    fn leaf(id: NodeId, name: impl Into<String>, kind: NodeKind, f: LeafFn<W>) -> Self {
        Node {
            id,
            name: name.into(),
            kind,
            children: Vec::new(),
            leaf: Some(f),
            on_halt: None,
            on_teardown: None,
            binding: None,
            last_status: None,
        }
    }

    pub fn sequence(id: NodeId, name: impl Into<String>, children: Vec<Node<W>>) -> Self {
        Self::composite(id, name, NodeKind::Sequence, children)
    }

    pub fn selector(id: NodeId, name: impl Into<String>, children: Vec<Node<W>>) -> Self {
        Self::composite(id, name, NodeKind::Selector, children)
    }

    pub fn parallel(id: NodeId, name: impl Into<String>, children: Vec<Node<W>>) -> Self {
        Self::composite(id, name, NodeKind::Parallel, children)
    }

    pub fn condition<F>(id: NodeId, name: impl Into<String>, f: F) -> Self
    where
        F: FnMut(&mut TickCtx<'_, W>) -> Result<NodeStatus, LeafError> + 'static,
    {
        Self::leaf(id, name, NodeKind::Condition, Box::new(f))
    }

    pub fn action<F>(id: NodeId, name: impl Into<String>, f: F) -> Self
    where
        F: FnMut(&mut TickCtx<'_, W>) -> Result<NodeStatus, LeafError> + 'static,
    {
        Self::leaf(id, name, NodeKind::Action, Box::new(f))
    }

    pub(crate) fn from_leaf_fn(id: NodeId, name: impl Into<String>, kind: NodeKind, f: LeafFn<W>) -> Self {
        Self::leaf(id, name, kind, f)
    }

    pub(crate) fn from_composite(
        id: NodeId,
        name: impl Into<String>,
        kind: NodeKind,
        children: Vec<Node<W>>,
    ) -> Self {
        Self::composite(id, name, kind, children)
    }

    /// Called when a RUNNING node stops being ticked because a sibling preempted it.
    pub fn with_halt(mut self, hook: impl FnMut(&mut W) + 'static) -> Self {
        self.on_halt = Some(Box::new(hook));
        self
    }

    /// Called once when the node is removed by a prune.
    pub fn with_teardown(mut self, hook: impl FnMut(&mut W) + 'static) -> Self {
        self.on_teardown = Some(Box::new(hook));
        self
    }

    pub(crate) fn set_hooks(&mut self, halt: Option<Hook<W>>, teardown: Option<Hook<W>>) {
        self.on_halt = halt;
        self.on_teardown = teardown;
    }

    pub fn with_binding(mut self, binding: impl Into<String>) -> Self {
        self.binding = Some(binding.into());
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn binding(&self) -> Option<&str> {
        self.binding.as_deref()
    }

    pub fn children(&self) -> &[Node<W>] {
        &self.children
    }

    pub(crate) fn children_mut(&mut self) -> &mut Vec<Node<W>> {
        &mut self.children
    }

    /// Status returned by the most recent tick, `None` if idle or halted.
    pub fn last_status(&self) -> Option<NodeStatus> {
        self.last_status
    }

    pub fn shape(&self) -> NodeShape {
        NodeShape {
            id: self.id,
            name: self.name.clone(),
            kind: self.kind,
            children: self.children.iter().map(Node::shape).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Node::node_count).sum::<usize>()
    }

    pub fn ids(&self, out: &mut Vec<NodeId>) {
        out.push(self.id);
        for c in &self.children {
            c.ids(out);
        }
    }

    pub fn find(&self, id: NodeId) -> Option<&Node<W>> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    pub fn find_mut(&mut self, id: NodeId) -> Option<&mut Node<W>> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    pub fn find_by_name(&self, name: &str) -> Option<&Node<W>> {
        if self.name == name {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find_by_name(name))
    }

    /// Removes the descendant `id`, returning it.
    pub(crate) fn remove_descendant(&mut self, id: NodeId) -> Option<Node<W>> {
        if let Some(pos) = self.children.iter().position(|c| c.id == id) {
            return Some(self.children.remove(pos));
        }
        self.children.iter_mut().find_map(|c| c.remove_descendant(id))
    }

    pub(crate) fn teardown(&mut self, world: &mut W) {
        if let Some(hook) = self.on_teardown.as_mut() {
            hook(world);
        }
        for c in &mut self.children {
            c.teardown(world);
        }
        self.last_status = None;
    }

    /// Halts a node that was left RUNNING, depth first.
    pub(crate) fn halt(&mut self, world: &mut W) {
        if self.last_status != Some(NodeStatus::Running) {
            return;
        }
        for c in &mut self.children {
            c.halt(world);
        }
        if let Some(hook) = self.on_halt.as_mut() {
            hook(world);
        }
        self.last_status = None;
    }

    pub fn tick(&mut self, ctx: &mut TickCtx<'_, W>, trace: &mut Option<Vec<TraceEntry>>) -> NodeStatus {
        let status = match self.kind {
            NodeKind::Condition | NodeKind::Action => {
                let f = self.leaf.as_mut().expect("leaf nodes always carry a callback");
                match f(ctx) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("leaf `{}` ({}) failed: {e}", self.name, self.id);
                        NodeStatus::Failure
                    }
                }
            }
            NodeKind::Sequence => self.tick_ordered(ctx, trace, NodeStatus::Success),
            NodeKind::Selector => self.tick_ordered(ctx, trace, NodeStatus::Failure),
            NodeKind::Parallel => {
                let mut any_failure = false;
                let mut all_success = true;
                for c in &mut self.children {
                    match c.tick(ctx, trace) {
                        NodeStatus::Failure => {
                            any_failure = true;
                            all_success = false;
                        }
                        NodeStatus::Running => all_success = false,
                        NodeStatus::Success => {}
                    }
                }
                if any_failure {
                    NodeStatus::Failure
                } else if all_success {
                    NodeStatus::Success
                } else {
                    NodeStatus::Running
                }
            }
        };
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry {
                tick_index: ctx.tick_index,
                node_id: self.id,
                status,
            });
        }
        self.last_status = Some(status);
        status
    }

    /// Sequence (`pass_on` = SUCCESS) or selector (`pass_on` = FAILURE).
    /// Memoryless: always restarts at the first child.
    fn tick_ordered(
        &mut self,
        ctx: &mut TickCtx<'_, W>,
        trace: &mut Option<Vec<TraceEntry>>,
        pass_on: NodeStatus,
    ) -> NodeStatus {
        let mut result = pass_on;
        let mut ticked = 0;
        for c in &mut self.children {
            ticked += 1;
            let s = c.tick(ctx, trace);
            if s != pass_on {
                result = s;
                break;
            }
        }
        for c in self.children.iter_mut().skip(ticked) {
            c.halt(ctx.world);
        }
        result
    }
}
