//! Cross-module integration: model files, alignments, and replay working
//! together, plus randomized invariants.

use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use conformance::alignment::{MoveKind, SynchronousProduct};
use conformance::engine::{self, EngineConfig, Topic, Variant};
use conformance::petri::{parse_model, write_model};
use conformance::search::{shortest_path, GoalMode, Heuristic};
use conformance::streamsim::{
    compress_timeline, generate_synthetic, replay, ProcessTree, SpeedMode,
};
use conformance::testnets::n1;

#[test]
fn model_file_round_trip_preserves_alignments() {
    let (net, _, _) = n1();
    let trace: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let reloaded = Arc::new(parse_model(&write_model(&net)).unwrap());
    let direct = Arc::new(net);
    for model in [direct, reloaded] {
        let spn = SynchronousProduct::build(model, &trace);
        let full = shortest_path(&spn, GoalMode::Full, Heuristic::Zero).unwrap();
        assert_eq!(full.total_cost, 1);
    }
}

#[test]
fn generated_log_replays_through_engine_with_zero_cost_at_no_noise() {
    let tree = ProcessTree::parse("seq(a, par(b, c), xor(d, e))").unwrap();
    let model = Arc::new(tree.to_wfnet());
    let log = generate_synthetic(&tree, 30, 0.0, 5).unwrap();
    let topic = Topic::new(2);
    let sched = compress_timeline(&log, Duration::from_secs(1));
    replay(&sched, &log, &topic, SpeedMode::MaxSpeed).unwrap();
    let out = engine::run(
        &topic,
        model,
        &EngineConfig {
            variant: Variant::Dsc,
            workers: 2,
            ..EngineConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.results.len(), log.events.len());
    assert!(out.results.iter().all(|r| r.cost == 0));
}

fn n1_trace() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec![
            "a".to_string(),
            "b".to_string(),
            "c".to_string(),
            "z".to_string(),
        ]),
        0..8,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The log projection of an optimal prefix-alignment is exactly the
    /// observed prefix, and its cost never exceeds the prefix length
    /// (all-log-moves is always available).
    #[test]
    fn alignment_projection_and_cost_bound(trace in n1_trace()) {
        let (net, _, _) = n1();
        let model = Arc::new(net);
        for k in 1..=trace.len() {
            let spn = SynchronousProduct::build(model.clone(), &trace[..k]);
            let al = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
            prop_assert!(al.total_cost as usize <= k);
            let projected: Vec<&str> = al
                .moves
                .iter()
                .filter(|m| matches!(m.kind, MoveKind::Synchronous | MoveKind::Log))
                .map(|m| m.activity.as_deref().unwrap())
                .collect();
            let expected: Vec<&str> = trace[..k].iter().map(String::as_str).collect();
            prop_assert_eq!(projected, expected);
        }
    }

    /// Doubling the replay target doubles every offset.
    #[test]
    fn compression_scales_linearly(seed in 0u64..1000) {
        let tree = ProcessTree::parse("seq(a, b)").unwrap();
        let log = generate_synthetic(&tree, 5, 0.0, seed).unwrap();
        let short = compress_timeline(&log, Duration::from_secs(10));
        let long = compress_timeline(&log, Duration::from_secs(20));
        for (s, l) in short.offsets.iter().zip(&long.offsets) {
            prop_assert!((l - 2.0 * s).abs() < 1e-9);
        }
    }
}
