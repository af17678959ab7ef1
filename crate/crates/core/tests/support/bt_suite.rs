//! Reactive-composite semantics. Each case panics on violation, so the same
//! functions serve as plain tests and as one acceptance criterion.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use btloc::bt::{BbValue, Node, NodeId, NodeStatus, TickCtx, Tree};
use btloc::error::{BtError, LeafError};

use NodeStatus::{Failure as F, Running as R, Success as S};

/// Records which leaves ran and which hooks fired.
#[derive(Default)]
pub struct Log {
    pub ticked: Vec<String>,
    pub halts: BTreeMap<String, u32>,
    pub teardowns: BTreeMap<String, u32>,
}

impl Log {
    fn take(&mut self) -> Vec<String> {
        std::mem::take(&mut self.ticked)
    }
}

type Switch = Rc<Cell<NodeStatus>>;

fn switch(s: NodeStatus) -> Switch {
    Rc::new(Cell::new(s))
}

fn leaf(id: u32, name: &str, out: Switch) -> Node<Log> {
    let n = name.to_string();
    let h = name.to_string();
    let t = name.to_string();
    Node::action(NodeId(id), name, move |ctx: &mut TickCtx<'_, Log>| {
        ctx.world.ticked.push(n.clone());
        Ok(out.get())
    })
    .with_halt(move |w: &mut Log| *w.halts.entry(h.clone()).or_default() += 1)
    .with_teardown(move |w: &mut Log| *w.teardowns.entry(t.clone()).or_default() += 1)
}

fn fixed(id: u32, name: &str, s: NodeStatus) -> Node<Log> {
    leaf(id, name, switch(s))
}

fn all_statuses() -> [NodeStatus; 3] {
    [S, F, R]
}

/// Reference results, written independently of the engine.
fn oracle_sequence(xs: &[NodeStatus]) -> (NodeStatus, usize) {
    for (i, &x) in xs.iter().enumerate() {
        if x != S {
            return (x, i + 1);
        }
    }
    (S, xs.len())
}

fn oracle_selector(xs: &[NodeStatus]) -> (NodeStatus, usize) {
    for (i, &x) in xs.iter().enumerate() {
        if x != F {
            return (x, i + 1);
        }
    }
    (F, xs.len())
}

fn oracle_parallel(xs: &[NodeStatus]) -> NodeStatus {
    if xs.contains(&F) {
        F
    } else if xs.iter().all(|&x| x == S) {
        S
    } else {
        R
    }
}

fn three_child_combos() -> Vec<[NodeStatus; 3]> {
    let mut v = Vec::new();
    for a in all_statuses() {
        for b in all_statuses() {
            for c in all_statuses() {
                v.push([a, b, c]);
            }
        }
    }
    v
}

fn children(xs: &[NodeStatus]) -> Vec<Node<Log>> {
    xs.iter()
        .enumerate()
        .map(|(i, &s)| fixed(i as u32 + 1, &format!("c{i}"), s))
        .collect()
}

pub fn sequence_truth_table() {
    for xs in three_child_combos() {
        let mut tree = Tree::new(Node::sequence(NodeId(0), "seq", children(&xs))).unwrap();
        let mut log = Log::default();
        let (want, ran) = oracle_sequence(&xs);
        assert_eq!(tree.tick(&mut log), want, "{xs:?}");
        assert_eq!(log.ticked.len(), ran, "{xs:?}");
    }
}

pub fn selector_truth_table() {
    for xs in three_child_combos() {
        let mut tree = Tree::new(Node::selector(NodeId(0), "sel", children(&xs))).unwrap();
        let mut log = Log::default();
        let (want, ran) = oracle_selector(&xs);
        assert_eq!(tree.tick(&mut log), want, "{xs:?}");
        assert_eq!(log.ticked.len(), ran, "{xs:?}");
    }
}

pub fn parallel_truth_table() {
    for xs in three_child_combos() {
        let mut tree = Tree::new(Node::parallel(NodeId(0), "par", children(&xs))).unwrap();
        let mut log = Log::default();
        assert_eq!(tree.tick(&mut log), oracle_parallel(&xs), "{xs:?}");
        assert_eq!(log.ticked.len(), 3, "parallel ticks every child: {xs:?}");
    }
}

pub fn empty_composites() {
    let mut log = Log::default();
    for (node, want) in [
        (Node::sequence(NodeId(0), "seq", vec![]), S),
        (Node::selector(NodeId(0), "sel", vec![]), F),
        (Node::parallel(NodeId(0), "par", vec![]), S),
    ] {
        assert_eq!(Tree::new(node).unwrap().tick(&mut log), want);
    }
}

pub fn leaf_error_maps_to_failure() {
    let bad = Node::condition(NodeId(1), "bad", |_: &mut TickCtx<'_, Log>| {
        Err(LeafError::new("boom"))
    });
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![bad, fixed(2, "ok", S)])).unwrap();
    let mut log = Log::default();
    assert_eq!(tree.tick(&mut log), S);
    assert_eq!(log.ticked, vec!["ok"]);
}

pub fn nested_memoryless_restart() {
    // a RUNNING sequence restarts from its first child on every tick
    let first = switch(S);
    let mut tree = Tree::new(Node::sequence(
        NodeId(0),
        "seq",
        vec![leaf(1, "a", first.clone()), fixed(2, "b", R)],
    ))
    .unwrap();
    let mut log = Log::default();
    for _ in 0..3 {
        assert_eq!(tree.tick(&mut log), R);
        assert_eq!(log.take(), vec!["a", "b"]);
    }
    first.set(F);
    assert_eq!(tree.tick(&mut log), F);
    assert_eq!(log.take(), vec!["a"]);
    assert_eq!(log.halts.get("b"), Some(&1));
}

pub fn reactive_preemption() {
    let high = switch(F);
    let mut tree = Tree::new(Node::selector(
        NodeId(0),
        "sel",
        vec![leaf(1, "high", high.clone()), fixed(2, "low", R)],
    ))
    .unwrap();
    let mut log = Log::default();
    assert_eq!(tree.tick(&mut log), R);
    assert_eq!(log.take(), vec!["high", "low"]);
    high.set(R);
    assert_eq!(tree.tick(&mut log), R);
    assert_eq!(log.take(), vec!["high"], "the former RUNNING child is not ticked");
}

pub fn single_switch_event_per_preemption() {
    let high = switch(F);
    let mut tree = Tree::new(Node::selector(
        NodeId(0),
        "sel",
        vec![
            leaf(1, "high", high.clone()),
            Node::sequence(NodeId(2), "low", vec![fixed(3, "low.a", S), fixed(4, "low.b", R)])
                .with_halt(|w: &mut Log| *w.halts.entry("low".into()).or_default() += 1),
        ],
    ))
    .unwrap();
    let mut log = Log::default();
    for _ in 0..3 {
        tree.tick(&mut log);
    }
    assert!(log.halts.is_empty());
    high.set(R);
    for _ in 0..5 {
        tree.tick(&mut log);
    }
    assert_eq!(log.halts.get("low"), Some(&1));
    assert_eq!(log.halts.get("low.b"), Some(&1), "the running leaf halts once");
    assert_eq!(log.halts.get("low.a"), None, "finished leaves are not halted");
    // preempt again after the low branch resumes: exactly one more event
    high.set(F);
    tree.tick(&mut log);
    high.set(S);
    tree.tick(&mut log);
    tree.tick(&mut log);
    assert_eq!(log.halts.get("low"), Some(&2));
}

pub fn each_leaf_ticked_at_most_once() {
    let mut tree = Tree::new(Node::parallel(
        NodeId(0),
        "root",
        vec![
            Node::sequence(NodeId(1), "s", vec![fixed(2, "a", S), fixed(3, "b", R)]),
            Node::selector(NodeId(4), "t", vec![fixed(5, "c", F), fixed(6, "d", S), fixed(7, "e", S)]),
        ],
    ))
    .unwrap();
    let mut log = Log::default();
    tree.tick(&mut log);
    let mut seen = log.take();
    let n = seen.len();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), n);
    assert_eq!(n, 4);
}

pub fn snapshot_stable_under_concurrent_injection() {
    const INJECTIONS: i64 = 1000;
    let observed: Rc<Cell<Option<(i64, i64)>>> = Rc::new(Cell::new(None));
    let go = Arc::new(AtomicBool::new(false));
    let o = observed.clone();
    let reader = Node::condition(NodeId(1), "reader", {
        let go = go.clone();
        move |ctx: &mut TickCtx<'_, Log>| {
            let first = ctx.blackboard.get("t").and_then(BbValue::as_int).unwrap_or(-1);
            // let the producer flood the inbox between the two reads
            go.store(true, Ordering::SeqCst);
            while ctx.blackboard.pending_inbox_len() < INJECTIONS as usize {
                thread::yield_now();
            }
            let second = ctx.blackboard.get("t").and_then(BbValue::as_int).unwrap_or(-1);
            o.set(Some((first, second)));
            Ok(S)
        }
    });
    let mut tree = Tree::new(Node::sequence(NodeId(0), "root", vec![reader])).unwrap();
    let writer = tree.blackboard().writer();
    writer.publish("t", BbValue::Int(-7));
    let producer = {
        let go = go.clone();
        let writer = writer.clone();
        thread::spawn(move || {
            while !go.load(Ordering::SeqCst) {
                thread::yield_now();
            }
            for i in 0..INJECTIONS {
                writer.publish("t", BbValue::Int(i));
            }
        })
    };
    let mut log = Log::default();
    tree.tick(&mut log);
    producer.join().unwrap();
    assert_eq!(observed.get(), Some((-7, -7)));
    assert_eq!(tree.blackboard().pending_inbox_len(), INJECTIONS as usize);
    // the next refresh drains the lot: the snapshot keeps the last value, the batch all of them
    let b = tree.blackboard_mut();
    assert_eq!(b.refresh(), INJECTIONS as usize);
    assert_eq!(b.get("t").and_then(BbValue::as_int), Some(INJECTIONS - 1));
    assert_eq!(b.batch("t").len(), INJECTIONS as usize);
}

fn shape_names(tree: &Tree<Log>) -> Vec<String> {
    tree.shape().children.iter().map(|c| c.name.clone()).collect()
}

pub fn edits_take_effect_at_tick_boundary() {
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![fixed(1, "a", F), fixed(2, "b", R)])).unwrap();
    let mut log = Log::default();
    tree.insert_subtree(NodeId(0), 0, fixed(3, "new", S)).unwrap();
    assert_eq!(shape_names(&tree), vec!["a", "b"], "queued, not applied");
    tree.tick(&mut log);
    assert_eq!(log.take(), vec!["new"], "insert at index 0 becomes highest priority");
    assert_eq!(log.halts.get("b"), None, "b was never RUNNING in this tree's history");

    tree.reorder_children(NodeId(0), vec![0, 2, 1]).unwrap();
    tree.prune_subtree(NodeId(3)).unwrap();
    assert_eq!(shape_names(&tree), vec!["new", "a", "b"]);
    tree.tick(&mut log);
    assert_eq!(shape_names(&tree), vec!["b", "a"]);
    assert_eq!(log.take(), vec!["b"]);
    assert_eq!(log.teardowns.get("new"), Some(&1));
}

pub fn edits_requested_mid_tick_are_deferred() {
    // a leaf that reorders its own parent while later siblings still run
    let requested = Rc::new(Cell::new(false));
    let r = requested.clone();
    let editor = Node::action(NodeId(1), "editor", move |ctx: &mut TickCtx<'_, Log>| {
        ctx.world.ticked.push("editor".into());
        if !r.replace(true) {
            ctx.request_reorder(NodeId(0), vec![2, 1, 0]);
            ctx.request_prune(NodeId(2));
        }
        Ok(F)
    });
    let mut tree = Tree::new(Node::selector(
        NodeId(0),
        "sel",
        vec![editor, fixed(2, "mid", F), fixed(3, "last", S)],
    ))
    .unwrap();
    let mut log = Log::default();
    tree.tick(&mut log);
    assert_eq!(log.take(), vec!["editor", "mid", "last"], "this tick runs the old order");
    assert_eq!(tree.pending_edits(), 2);
    tree.tick(&mut log);
    assert_eq!(log.take(), vec!["last"]);
    assert_eq!(shape_names(&tree), vec!["last", "editor"]);
    assert_eq!(log.teardowns.get("mid"), Some(&1));
}

pub fn prune_running_subtree_tears_down_once() {
    let mut tree = Tree::new(Node::parallel(
        NodeId(0),
        "root",
        vec![
            Node::sequence(NodeId(1), "sensor", vec![fixed(2, "connect", S), fixed(3, "localise", R)]),
            fixed(4, "other", R),
        ],
    ))
    .unwrap();
    let mut log = Log::default();
    tree.tick(&mut log);
    tree.prune_subtree(NodeId(1)).unwrap();
    for _ in 0..3 {
        tree.tick(&mut log);
    }
    assert_eq!(log.teardowns.get("localise"), Some(&1));
    assert_eq!(log.teardowns.get("connect"), Some(&1));
    assert!(log.halts.is_empty(), "pruning is not a preemption");
    log.take();
    tree.tick(&mut log);
    assert_eq!(log.take(), vec!["other"]);
}

pub fn insert_then_prune_restores_shape() {
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![fixed(1, "a", F), fixed(2, "b", S)])).unwrap();
    let before = tree.shape();
    let mut log = Log::default();
    tree.insert_subtree(NodeId(0), 1, fixed(9, "x", S)).unwrap();
    tree.tick(&mut log);
    tree.prune_subtree(NodeId(9)).unwrap();
    tree.tick(&mut log);
    assert_eq!(tree.shape(), before);
}

pub fn insert_into_empty_composite() {
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![])).unwrap();
    tree.insert_subtree(NodeId(0), 0, fixed(1, "a", S)).unwrap();
    let mut log = Log::default();
    assert_eq!(tree.tick(&mut log), S);
    assert_eq!(tree.shape().children.len(), 1);
}

pub fn identity_reorder_is_noop() {
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![fixed(1, "a", F), fixed(2, "b", S)])).unwrap();
    let before = tree.shape();
    tree.reorder_children(NodeId(0), vec![0, 1]).unwrap();
    tree.tick(&mut Log::default());
    assert_eq!(tree.shape(), before);
}

pub fn invalid_edits_are_rejected() {
    let mut tree = Tree::new(Node::selector(NodeId(0), "sel", vec![fixed(1, "a", F), fixed(2, "b", S)])).unwrap();
    assert!(matches!(
        tree.insert_subtree(NodeId(1), 0, fixed(5, "x", S)),
        Err(BtError::LeafParent(1))
    ));
    assert!(matches!(
        tree.insert_subtree(NodeId(0), 0, fixed(2, "dup", S)),
        Err(BtError::DuplicateId(2))
    ));
    assert!(matches!(
        tree.insert_subtree(NodeId(0), 3, fixed(5, "x", S)),
        Err(BtError::InvalidIndex { .. })
    ));
    assert!(matches!(tree.prune_subtree(NodeId(0)), Err(BtError::PruneRoot)));
    assert!(matches!(tree.prune_subtree(NodeId(42)), Err(BtError::UnknownNode(42))));
    for bad in [vec![0, 0], vec![0], vec![1, 2]] {
        assert!(matches!(
            tree.reorder_children(NodeId(0), bad),
            Err(BtError::InvalidPermutation(0))
        ));
    }
    assert_eq!(tree.pending_edits(), 0);
}

pub fn trace_records_every_visit() {
    let mut tree = Tree::new(Node::sequence(NodeId(0), "seq", vec![fixed(1, "a", S), fixed(2, "b", R)])).unwrap();
    tree.enable_trace();
    let mut log = Log::default();
    tree.tick(&mut log);
    tree.tick(&mut log);
    let trace = tree.take_trace();
    let got: Vec<(u64, u32, NodeStatus)> = trace.iter().map(|e| (e.tick_index, e.node_id.0, e.status)).collect();
    assert_eq!(
        got,
        vec![(0, 1, S), (0, 2, R), (0, 0, R), (1, 1, S), (1, 2, R), (1, 0, R)]
    );
    assert!(tree.take_trace().is_empty());
}

pub type Case = (&'static str, fn());

pub fn cases() -> Vec<Case> {
    vec![
        ("sequence_truth_table", sequence_truth_table),
        ("selector_truth_table", selector_truth_table),
        ("parallel_truth_table", parallel_truth_table),
        ("empty_composites", empty_composites),
        ("leaf_error_maps_to_failure", leaf_error_maps_to_failure),
        ("nested_memoryless_restart", nested_memoryless_restart),
        ("reactive_preemption", reactive_preemption),
        ("single_switch_event_per_preemption", single_switch_event_per_preemption),
        ("each_leaf_ticked_at_most_once", each_leaf_ticked_at_most_once),
        ("snapshot_stable_under_concurrent_injection", snapshot_stable_under_concurrent_injection),
        ("edits_take_effect_at_tick_boundary", edits_take_effect_at_tick_boundary),
        ("edits_requested_mid_tick_are_deferred", edits_requested_mid_tick_are_deferred),
        ("prune_running_subtree_tears_down_once", prune_running_subtree_tears_down_once),
        ("insert_then_prune_restores_shape", insert_then_prune_restores_shape),
        ("insert_into_empty_composite", insert_into_empty_composite),
        ("identity_reorder_is_noop", identity_reorder_is_noop),
        ("invalid_edits_are_rejected", invalid_edits_are_rejected),
        ("trace_records_every_visit", trace_records_every_visit),
    ]
}
