use std::collections::BTreeMap;
use std::rc::Rc;

use super::leaves::register_leaves;
use super::localiser::{Localiser, NodeSlot};
use crate::bt::{Blackboard, IdGen, LeafRegistry, Node, Tree, TreeDef};
use crate::error::BtError;
use crate::pipeline::{FilterId, SensorKind};

/// One sensor subtree. A `standalone` subtree has no fallback sibling, so its
/// initialisation check waits (RUNNING) instead of failing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorSubtreeSpec {
    pub sensor: SensorKind,
    pub filter: FilterId,
    pub standalone: bool,
}

pub(crate) fn sensor_label(s: SensorKind) -> &'static str {
    match s {
        SensorKind::Gps => "gps",
        SensorKind::Lidar => "lidar",
    }
}

pub(crate) fn filter_label(f: FilterId) -> &'static str {
    match f {
        FilterId::Main => "main",
        FilterId::Backup => "backup",
        FilterId::Audit => "audit",
    }
}

/// Tree name of a sensor subtree, e.g. `main-lidar`.
pub fn subtree_name(sensor: SensorKind, filter: FilterId) -> String {
    format!("{}-{}", filter_label(filter), sensor_label(sensor))
}

/// Leaf binding prefix of a sensor subtree, e.g. `lidar.main`.
pub(crate) fn binding_prefix(sensor: SensorKind, filter: FilterId) -> String {
    format!("{}.{}", sensor_label(sensor), filter_label(filter))
}

/// INIT, then LOCALISE down the 2σ / 3σ / all ladder, then FAIL.
///
/// LOCALISE only returns SUCCESS (through its last, `lost`, child) once
/// every rung has failed, which hands control to FAIL; FAIL releases the
/// sensor and reports FAILURE so a parent selector moves on.
pub fn build_single_sensor_subtree(spec: &SensorSubtreeSpec) -> TreeDef {
    let name = subtree_name(spec.sensor, spec.filter);
    let b = binding_prefix(spec.sensor, spec.filter);
    let init = if spec.standalone {
        format!("{b}.init.wait")
    } else {
        format!("{b}.init")
    };
    let mut rungs: Vec<TreeDef> = (0..3)
        .map(|k| {
            TreeDef::sequence(
                format!("{name}.rung{k}"),
                vec![
                    TreeDef::action(format!("{name}.bound{k}"), format!("{b}.bound.{k}")),
                    TreeDef::condition(format!("{name}.localising{k}"), format!("{b}.localising.{k}")),
                ],
            )
        })
        .collect();
    rungs.push(TreeDef::action(format!("{name}.lost"), format!("{b}.lost")));
    TreeDef::sequence(
        name.clone(),
        vec![
            TreeDef::sequence(
                format!("{name}.init"),
                vec![
                    TreeDef::condition(format!("{name}.init-check"), init),
                    TreeDef::action(format!("{name}.connect"), format!("{b}.connect")),
                ],
            ),
            TreeDef::selector(format!("{name}.localise"), rungs),
            TreeDef::sequence(
                format!("{name}.fail"),
                vec![
                    TreeDef::action(format!("{name}.disconnect"), format!("{b}.disconnect")),
                    TreeDef::action(format!("{name}.report-failure"), format!("{b}.report-failure")),
                ],
            ),
        ],
    )
    .with_hooks(format!("{b}.release"))
}

/// Main-filter selector: operator resets, cross-filter resets, then the
/// sensors in priority order, then dead reckoning.
pub fn build_sensor_selector(sensors: &[SensorKind]) -> TreeDef {
    let mut children = vec![
        TreeDef::condition("manual-reset", "manual-reset"),
        TreeDef::condition("cross-filter-reset", "cross-filter-reset"),
    ];
    children.extend(sensors.iter().map(|&sensor| {
        build_single_sensor_subtree(&SensorSubtreeSpec {
            sensor,
            filter: FilterId::Main,
            standalone: false,
        })
    }));
    children.push(TreeDef::action("dr-only", "dr-only"));
    TreeDef::selector("main-selector", children)
}

/// The full localiser policy: bookkeeping leaves, the GPS-context gate, a
/// standalone backup subtree and the main selector, ticked in parallel.
pub fn build_experiment_tree(main_sensors: &[SensorKind], backup: Option<SensorKind>) -> TreeDef {
    let mut children = vec![
        TreeDef::action("topic-listeners", "topic-listeners"),
        TreeDef::action("gps-context-gate", "gps-context-gate"),
    ];
    if let Some(sensor) = backup {
        children.push(build_single_sensor_subtree(&SensorSubtreeSpec {
            sensor,
            filter: FilterId::Backup,
            standalone: true,
        }));
    }
    children.push(build_sensor_selector(main_sensors));
    TreeDef::parallel("root", children)
}

/// Name to slot for every node. Names are unique in trees built here.
pub fn index_tree<W>(root: &Node<W>) -> BTreeMap<String, NodeSlot> {
    fn walk<W>(n: &Node<W>, parent: Option<&Node<W>>, index: usize, out: &mut BTreeMap<String, NodeSlot>) {
        out.insert(
            n.name().to_string(),
            NodeSlot {
                id: n.id(),
                parent: parent.map(Node::id),
                index,
            },
        );
        for (i, c) in n.children().iter().enumerate() {
            walk(c, Some(n), i, out);
        }
    }
    let mut out = BTreeMap::new();
    walk(root, None, 0, &mut out);
    out
}

pub(crate) fn find_def<'a>(def: &'a TreeDef, name: &str) -> Option<&'a TreeDef> {
    if def.name == name {
        return Some(def);
    }
    def.children.iter().find_map(|c| find_def(c, name))
}

/// Instantiates `def` against the standard leaves and hands the world
/// what it needs to edit the tree at run time. `blackboard` must be the one
/// whose writer the world's publisher holds.
pub fn instantiate_localiser_tree(
    world: &mut Localiser,
    def: &TreeDef,
    blackboard: Blackboard,
) -> Result<Tree<Localiser>, BtError> {
    let mut registry = LeafRegistry::new();
    register_leaves(&mut registry);
    let mut ids = IdGen::starting_at(0);
    let root = registry.instantiate(def, &mut ids)?;
    world.node_index = index_tree(&root);
    world.registry = Some(Rc::new(registry));
    world.tree_def = Some(def.clone());
    world.id_gen = ids;
    world.pruned.clear();
    Tree::with_blackboard(root, blackboard)
}
