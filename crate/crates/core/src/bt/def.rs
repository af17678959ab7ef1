//! Declarative (JSON) tree definitions and the registry that binds leaf
//! names to callbacks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::node::{Hook, IdGen, LeafFn, Node, NodeKind, NodeStatus, TickCtx};
use crate::error::{BtError, LeafError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDef {
    pub kind: NodeKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeDef>,
    /// Leaf callback binding (conditions and actions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<String>,
    /// Halt/teardown hook binding (any node).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hooks: Option<String>,
}

impl TreeDef {
    pub fn composite(kind: NodeKind, name: impl Into<String>, children: Vec<TreeDef>) -> Self {
        TreeDef {
            kind,
            name: name.into(),
            children,
            leaf: None,
            hooks: None,
        }
    }

    pub fn sequence(name: impl Into<String>, children: Vec<TreeDef>) -> Self {
        Self::composite(NodeKind::Sequence, name, children)
    }

    pub fn selector(name: impl Into<String>, children: Vec<TreeDef>) -> Self {
        Self::composite(NodeKind::Selector, name, children)
    }

    pub fn parallel(name: impl Into<String>, children: Vec<TreeDef>) -> Self {
        Self::composite(NodeKind::Parallel, name, children)
    }

    pub fn condition(name: impl Into<String>, leaf: impl Into<String>) -> Self {
        TreeDef {
            kind: NodeKind::Condition,
            name: name.into(),
            children: Vec::new(),
            leaf: Some(leaf.into()),
            hooks: None,
        }
    }

    pub fn action(name: impl Into<String>, leaf: impl Into<String>) -> Self {
        TreeDef {
            kind: NodeKind::Action,
            name: name.into(),
            children: Vec::new(),
            leaf: Some(leaf.into()),
            hooks: None,
        }
    }

    pub fn with_hooks(mut self, hooks: impl Into<String>) -> Self {
        self.hooks = Some(hooks.into());
        self
    }

    pub fn from_json(s: &str) -> Result<Self, BtError> {
        serde_json::from_str(s).map_err(|e| BtError::Definition(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree definitions always serialise")
    }
}

type LeafFactory<W> = Box<dyn Fn() -> LeafFn<W>>;
type HookFactory<W> = Box<dyn Fn() -> (Option<Hook<W>>, Option<Hook<W>>)>;

/// Named leaf callbacks and hooks used to instantiate a [`TreeDef`].
pub struct LeafRegistry<W> {
    leaves: BTreeMap<String, LeafFactory<W>>,
    hooks: BTreeMap<String, HookFactory<W>>,
}

impl<W> Default for LeafRegistry<W> {
    fn default() -> Self {
        LeafRegistry {
            leaves: BTreeMap::new(),
            hooks: BTreeMap::new(),
        }
    }
}

impl<W: 'static> LeafRegistry<W> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf; each instantiated node gets its own clone of `f`.
    pub fn register<F>(&mut self, name: impl Into<String>, f: F)
    where
        F: FnMut(&mut TickCtx<'_, W>) -> Result<NodeStatus, LeafError> + Clone + 'static,
    {
        self.leaves
            .insert(name.into(), Box::new(move || Box::new(f.clone()) as LeafFn<W>));
    }

    pub fn register_hooks<H, T>(&mut self, name: impl Into<String>, halt: Option<H>, teardown: Option<T>)
    where
        H: FnMut(&mut W) + Clone + 'static,
        T: FnMut(&mut W) + Clone + 'static,
    {
        self.hooks.insert(
            name.into(),
            Box::new(move || {
                (
                    halt.clone().map(|h| Box::new(h) as Hook<W>),
                    teardown.clone().map(|t| Box::new(t) as Hook<W>),
                )
            }),
        );
    }

    pub fn has_leaf(&self, name: &str) -> bool {
        self.leaves.contains_key(name)
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn instantiate(&self, def: &TreeDef, ids: &mut IdGen) -> Result<Node<W>, BtError> {
        let id = ids.next_id();
        let mut node = if def.kind.is_composite() {
            if def.leaf.is_some() {
                return Err(BtError::BindingOnComposite(def.name.clone()));
            }
            let children = def
                .children
                .iter()
                .map(|c| self.instantiate(c, ids))
                .collect::<Result<Vec<_>, _>>()?;
            Node::from_composite(id, def.name.clone(), def.kind, children)
        } else {
            if !def.children.is_empty() {
                return Err(BtError::Definition(format!("leaf `{}` has children", def.name)));
            }
            let binding = def
                .leaf
                .as_deref()
                .ok_or_else(|| BtError::MissingBinding(def.name.clone()))?;
            let factory = self
                .leaves
                .get(binding)
                .ok_or_else(|| BtError::UnknownBinding(binding.to_string()))?;
            Node::from_leaf_fn(id, def.name.clone(), def.kind, factory()).with_binding(binding)
        };
        if let Some(h) = def.hooks.as_deref() {
            let factory = self
                .hooks
                .get(h)
                .ok_or_else(|| BtError::UnknownBinding(h.to_string()))?;
            let (halt, teardown) = factory();
            node.set_hooks(halt, teardown);
        }
        Ok(node)
    }
}
