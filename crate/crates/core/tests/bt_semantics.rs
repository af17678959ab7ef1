mod support;

use support::bt_suite;

macro_rules! cases {
    ($($name:ident),* $(,)?) => {
        $( #[test] fn $name() { bt_suite::$name() } )*

        #[test]
        fn suite_lists_every_case() {
            let listed: Vec<&str> = bt_suite::cases().iter().map(|c| c.0).collect();
            assert_eq!(listed, vec![$(stringify!($name)),*]);
        }
    };
}

cases!(
    sequence_truth_table,
    selector_truth_table,
    parallel_truth_table,
    empty_composites,
    leaf_error_maps_to_failure,
    nested_memoryless_restart,
    reactive_preemption,
    single_switch_event_per_preemption,
    each_leaf_ticked_at_most_once,
    snapshot_stable_under_concurrent_injection,
    edits_take_effect_at_tick_boundary,
    edits_requested_mid_tick_are_deferred,
    prune_running_subtree_tears_down_once,
    insert_then_prune_restores_shape,
    insert_into_empty_composite,
    identity_reorder_is_noop,
    invalid_edits_are_rejected,
    trace_records_every_visit,
);
