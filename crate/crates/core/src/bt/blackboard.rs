use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::estimation::AlignmentResult;
use crate::pipeline::UpdateStats;
use crate::types::{Measurement, Pose2D};

#[derive(Debug, Clone, PartialEq)]
pub enum BbValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Pose(Pose2D),
    Measurement(Measurement),
    Stats(UpdateStats),
    Alignment(AlignmentResult),
}

impl BbValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            BbValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            BbValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            BbValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            BbValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_measurement(&self) -> Option<&Measurement> {
        match self {
            BbValue::Measurement(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_pose(&self) -> Option<&Pose2D> {
        match self {
            BbValue::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_stats(&self) -> Option<&UpdateStats> {
        match self {
            BbValue::Stats(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_alignment(&self) -> Option<&AlignmentResult> {
        match self {
            BbValue::Alignment(a) => Some(a),
            _ => None,
        }
    }
}

type Inbox = Arc<Mutex<Vec<(String, BbValue)>>>;

/// Thread-safe producer handle onto a blackboard's live inbox.
#[derive(Clone)]
pub struct BlackboardWriter {
    inbox: Inbox,
}

impl BlackboardWriter {
    pub fn publish(&self, topic: impl Into<String>, value: BbValue) {
        self.inbox
            .lock()
            .expect("blackboard inbox poisoned")
            .push((topic.into(), value));
    }
}

/// Per-tick input snapshot plus persistent node variables.
///
/// Topics are only ever changed by [`Blackboard::refresh`], which the engine
/// calls once at the start of every tick, so every read of a topic during a
/// traversal observes the same value. Nodes that need to remember something
/// across ticks use the separate variable store.
#[derive(Default)]
pub struct Blackboard {
    snapshot: BTreeMap<String, BbValue>,
    batch: BTreeMap<String, Vec<BbValue>>,
    vars: BTreeMap<String, BbValue>,
    inbox: Inbox,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn writer(&self) -> BlackboardWriter {
        BlackboardWriter {
            inbox: Arc::clone(&self.inbox),
        }
    }

    /// Drains the inbox into the snapshot. Returns the number of values drained.
    pub fn refresh(&mut self) -> usize {
        let drained = std::mem::take(&mut *self.inbox.lock().expect("blackboard inbox poisoned"));
        self.batch.clear();
        let n = drained.len();
        for (topic, value) in drained {
            self.snapshot.insert(topic.clone(), value.clone());
            self.batch.entry(topic).or_default().push(value);
        }
        n
    }

    /// Latest value of `topic` as of the current tick.
    pub fn get(&self, topic: &str) -> Option<&BbValue> {
        self.snapshot.get(topic)
    }

    /// Every value published on `topic` between the previous tick and this one.
    pub fn batch(&self, topic: &str) -> &[BbValue] {
        self.batch.get(topic).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn var(&self, key: &str) -> Option<&BbValue> {
        self.vars.get(key)
    }

    pub fn set_var(&mut self, key: impl Into<String>, value: BbValue) {
        self.vars.insert(key.into(), value);
    }

    pub fn remove_var(&mut self, key: &str) -> Option<BbValue> {
        self.vars.remove(key)
    }

    pub fn clear_vars_with_prefix(&mut self, prefix: &str) {
        self.vars.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn flag(&self, key: &str) -> bool {
        self.vars.get(key).and_then(BbValue::as_bool).unwrap_or(false)
    }

    pub fn pending_inbox_len(&self) -> usize {
        self.inbox.lock().expect("blackboard inbox poisoned").len()
    }
}
