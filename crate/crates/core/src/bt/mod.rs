//! Reactive behavior-tree engine.
//!
//! Composites are memoryless: every tick re-evaluates children from the
//! first one, so a higher-priority child that becomes able to run preempts
//! whatever was running to its right. A preempted RUNNING subtree is halted
//! (its halt hooks fire) so it can release whatever it holds.

mod blackboard;
mod def;
mod node;
mod tree;

pub use blackboard::{BbValue, Blackboard, BlackboardWriter};
pub use def::{LeafRegistry, TreeDef};
pub use node::{
    Hook, IdGen, LeafFn, Node, NodeId, NodeKind, NodeShape, NodeStatus, TickCtx, TraceEntry, TreeEdit,
};
pub use tree::{Tree, DEFAULT_TICK_PERIOD};
