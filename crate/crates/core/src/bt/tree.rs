use std::collections::BTreeSet;
use std::time::Duration;

use super::blackboard::Blackboard;
use super::node::{Node, NodeId, NodeShape, NodeStatus, TickCtx, TraceEntry, TreeEdit};
use crate::error::BtError;

pub const DEFAULT_TICK_PERIOD: Duration = Duration::from_millis(500);

/// A behavior tree with its blackboard and a queue of structural edits.
///
/// Edits requested between ticks or by leaves during a tick are applied at
/// the start of the following tick, before the blackboard is refreshed.
pub struct Tree<W> {
    root: Node<W>,
    blackboard: Blackboard,
    pending: Vec<TreeEdit<W>>,
    tick_index: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl<W> Tree<W> {
    pub fn new(root: Node<W>) -> Result<Self, BtError> {
        Self::with_blackboard(root, Blackboard::new())
    }

    /// Uses an existing blackboard, so writers can be handed out before the tree exists.
    pub fn with_blackboard(root: Node<W>, blackboard: Blackboard) -> Result<Self, BtError> {
        let mut ids = Vec::new();
        root.ids(&mut ids);
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(BtError::DuplicateId(id.0));
            }
        }
        Ok(Tree {
            root,
            blackboard,
            pending: Vec::new(),
            tick_index: 0,
            trace: None,
        })
    }

    pub fn root(&self) -> &Node<W> {
        &self.root
    }

    pub fn blackboard(&self) -> &Blackboard {
        &self.blackboard
    }

    pub fn blackboard_mut(&mut self) -> &mut Blackboard {
        &mut self.blackboard
    }

    pub fn tick_index(&self) -> u64 {
        self.tick_index
    }

    pub fn shape(&self) -> NodeShape {
        self.root.shape()
    }

    pub fn find(&self, id: NodeId) -> Option<&Node<W>> {
        self.root.find(id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.root.find(id).is_some()
    }

    pub fn pending_edits(&self) -> usize {
        self.pending.len()
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    /// Returns and clears the trace collected since the last call.
    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// One full traversal: pending edits, snapshot refresh, then the root.
    pub fn tick(&mut self, world: &mut W) -> NodeStatus {
        self.apply_pending(world);
        self.blackboard.refresh();
        let mut edits = Vec::new();
        let status = {
            let mut ctx = TickCtx::new(world, &mut self.blackboard, self.tick_index, &mut edits);
            self.root.tick(&mut ctx, &mut self.trace)
        };
        self.pending.extend(edits);
        self.tick_index += 1;
        status
    }

    pub fn insert_subtree(&mut self, parent: NodeId, index: usize, subtree: Node<W>) -> Result<(), BtError> {
        self.validate_insert(parent, index, &subtree, true)?;
        self.pending.push(TreeEdit::Insert {
            parent,
            index,
            subtree,
        });
        Ok(())
    }

    pub fn prune_subtree(&mut self, id: NodeId) -> Result<(), BtError> {
        self.validate_prune(id)?;
        self.pending.push(TreeEdit::Prune(id));
        Ok(())
    }

    /// `permutation[i]` is the current index of the child that should end up at `i`.
    pub fn reorder_children(&mut self, parent: NodeId, permutation: Vec<usize>) -> Result<(), BtError> {
        self.validate_reorder(parent, &permutation)?;
        self.pending.push(TreeEdit::Reorder {
            parent,
            permutation,
        });
        Ok(())
    }

    /// Applies queued edits now. `tick` does this automatically.
    pub fn apply_pending(&mut self, world: &mut W) {
        for edit in std::mem::take(&mut self.pending) {
            if let Err(e) = self.apply(edit, world) {
                log::error!("dropping structural edit: {e}");
            }
        }
    }

    /// Halts every RUNNING node, as if the whole tree were preempted.
    pub fn halt(&mut self, world: &mut W) {
        self.root.halt(world);
    }

    fn apply(&mut self, edit: TreeEdit<W>, world: &mut W) -> Result<(), BtError> {
        match edit {
            TreeEdit::Insert {
                parent,
                index,
                subtree,
            } => {
                self.validate_insert(parent, index, &subtree, false)?;
                let p = self.root.find_mut(parent).ok_or(BtError::UnknownNode(parent.0))?;
                p.children_mut().insert(index, subtree);
            }
            TreeEdit::Prune(id) => {
                self.validate_prune(id)?;
                let mut removed = self.root.remove_descendant(id).ok_or(BtError::UnknownNode(id.0))?;
                removed.teardown(world);
            }
            TreeEdit::Reorder {
                parent,
                permutation,
            } => {
                self.validate_reorder(parent, &permutation)?;
                let p = self.root.find_mut(parent).ok_or(BtError::UnknownNode(parent.0))?;
                let mut old: Vec<Option<Node<W>>> = p.children_mut().drain(..).map(Some).collect();
                let reordered = permutation
                    .iter()
                    .map(|&i| old[i].take().expect("validated permutation"))
                    .collect();
                *p.children_mut() = reordered;
            }
        }
        Ok(())
    }

    fn validate_insert(
        &self,
        parent: NodeId,
        index: usize,
        subtree: &Node<W>,
        include_pending: bool,
    ) -> Result<(), BtError> {
        let p = self.root.find(parent).ok_or(BtError::UnknownNode(parent.0))?;
        if !p.kind().is_composite() {
            return Err(BtError::LeafParent(parent.0));
        }
        if index > p.children().len() {
            return Err(BtError::InvalidIndex {
                parent: parent.0,
                index,
                len: p.children().len(),
            });
        }
        let mut existing = Vec::new();
        self.root.ids(&mut existing);
        if include_pending {
            for e in &self.pending {
                if let TreeEdit::Insert { subtree, .. } = e {
                    subtree.ids(&mut existing);
                }
            }
        }
        let existing: BTreeSet<NodeId> = existing.into_iter().collect();
        let mut incoming = Vec::new();
        subtree.ids(&mut incoming);
        let mut seen = BTreeSet::new();
        for id in incoming {
            if existing.contains(&id) || !seen.insert(id) {
                return Err(BtError::DuplicateId(id.0));
            }
        }
        Ok(())
    }

    fn validate_prune(&self, id: NodeId) -> Result<(), BtError> {
        if id == self.root.id() {
            return Err(BtError::PruneRoot);
        }
        if self.root.find(id).is_none() {
            return Err(BtError::UnknownNode(id.0));
        }
        Ok(())
    }

    fn validate_reorder(&self, parent: NodeId, permutation: &[usize]) -> Result<(), BtError> {
        let p = self.root.find(parent).ok_or(BtError::UnknownNode(parent.0))?;
        let n = p.children().len();
        let distinct: BTreeSet<usize> = permutation.iter().copied().collect();
        if permutation.len() != n || distinct.len() != n || permutation.iter().any(|&i| i >= n) {
            return Err(BtError::InvalidPermutation(parent.0));
        }
        Ok(())
    }
}
