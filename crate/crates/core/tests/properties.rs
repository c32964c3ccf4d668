use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use recallgraph_core::config::EngineConfig;
use recallgraph_core::harness::{generate_scenario, perturb_stream, template_names, Interruption, NoiseProfile};
use recallgraph_core::memory::{MemoryStore, RetrievalQuery};
use recallgraph_core::perception::{
    build_scene_graph, fold_frames, DetectionCategory, EventFrame, EventPayload, Gaze, HandObservation, HandPose,
    HandSide, PerceptionConfig,
};
use recallgraph_core::reasoning::{
    infer_task_plan, plan_action, track_progress, ProgressState, StepPointer, TaskPlan, TrackerConfig,
};
use recallgraph_core::scene_graph::{
    canonical_encode, relation_triples, validate_graph, EdgeCategory, EdgeKind, EntityId, NodeKind, SceneGraph,
};
use recallgraph_core::session::{ingest_recording, Session, RECORDED_AT};

const LABELS: [&str; 4] = ["onion", "pot", "spoon", "bowl"];

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(7),
        ..ProptestConfig::default()
    }
}

fn arb_point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-0.4f64..0.4)
}

fn arb_direction() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("non-degenerate", |d| d.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|d| {
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            [d[0] / n, d[1] / n, d[2] / n]
        })
}

fn arb_payloads() -> impl Strategy<Value = Vec<EventPayload>> {
    let detections = prop::collection::vec((0..4usize, arb_point(), 0.0f64..=1.0, any::<bool>()), 0..6);
    let hands = prop::collection::vec((any::<bool>(), arb_point(), 0..3usize), 0..3);
    let gaze = prop::option::of((arb_point(), arb_direction()));
    let action = prop::option::of((0..4usize, prop::option::of(0..4usize), any::<bool>()));
    (detections, hands, gaze, action, any::<bool>()).prop_map(|(dets, hands, gaze, action, speak)| {
        let mut out = Vec::new();
        for (i, pos, confidence, ui) in dets {
            out.push(EventPayload::Detection {
                entity_id: EntityId::new(LABELS[i]).unwrap(),
                label: LABELS[i].into(),
                category: if ui {
                    DetectionCategory::UiElement
                } else {
                    DetectionCategory::Object
                },
                position: pos,
                confidence,
            });
        }
        let mut sides = BTreeSet::new();
        for (left, position, pose) in hands {
            let side = if left { HandSide::Left } else { HandSide::Right };
            if sides.insert(side) {
                out.push(EventPayload::Hand(HandObservation {
                    side,
                    position,
                    pose: [HandPose::Open, HandPose::Pinch, HandPose::Grasp][pose],
                }));
            }
        }
        if let Some((origin, direction)) = gaze {
            out.push(EventPayload::Gaze(Gaze { origin, direction }));
        }
        if let Some((s, o, rel)) = action {
            out.push(EventPayload::UserAction {
                verb: "stir".into(),
                subject_id: EntityId::new(LABELS[s]).unwrap(),
                object_id: o.map(|o| EntityId::new(LABELS[o]).unwrap()),
                relation: rel.then(|| "acts_on".into()),
            });
        }
        if speak {
            out.push(EventPayload::Speech {
                text: "now the pot".into(),
            });
        }
        out
    })
}

fn frames_of(payloads: Vec<Vec<EventPayload>>) -> Vec<EventFrame> {
    payloads
        .into_iter()
        .enumerate()
        .map(|(t, ps)| {
            let mut f = EventFrame::new(t as u64);
            for p in ps {
                f.push(p);
            }
            f
        })
        .collect()
}

fn without_gaze(frames: &[EventFrame]) -> Vec<EventFrame> {
    frames
        .iter()
        .map(|f| EventFrame {
            t: f.t,
            events: f
                .events
                .iter()
                .filter(|e| !matches!(e.payload, EventPayload::Gaze(_)))
                .cloned()
                .collect(),
        })
        .collect()
}

fn non_user_nodes(g: &SceneGraph) -> Vec<String> {
    g.nodes
        .iter()
        .filter(|n| n.kind != NodeKind::User)
        .map(|n| format!("{n:?}"))
        .collect()
}

proptest! {
    #![proptest_config(config(300))]

    #[test]
    fn perception_outputs_valid_deterministic_graphs(ps in prop::collection::vec(arb_payloads(), 1..8)) {
        let frames = frames_of(ps);
        let cfg = PerceptionConfig::default();
        let a = fold_frames(&frames, &cfg).unwrap();
        let b = fold_frames(&frames, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(validate_graph(x).is_empty());
            prop_assert_eq!(x.nodes.iter().filter(|n| n.kind == NodeKind::User).count(), 1);
            prop_assert_eq!(canonical_encode(x).unwrap(), canonical_encode(y).unwrap());
            for e in x.edges.iter().filter(|e| e.kind == EdgeKind::AttendingTo) {
                prop_assert!(x.has_edge(e.source.as_str(), EdgeKind::LookingAt, e.target.as_str()));
            }
        }
    }

    #[test]
    fn raising_min_confidence_never_adds_nodes(ps in arb_payloads(), lo in 0.0f64..0.5, hi in 0.5f64..1.0) {
        let frame = &frames_of(vec![ps])[0];
        let low = PerceptionConfig { min_confidence: lo, ..PerceptionConfig::default() };
        let high = PerceptionConfig { min_confidence: hi, ..PerceptionConfig::default() };
        let a = build_scene_graph(frame, None, &low).unwrap().graph;
        let b = build_scene_graph(frame, None, &high).unwrap().graph;
        let ids_a: BTreeSet<_> = a.nodes.iter().map(|n| n.id.clone()).collect();
        prop_assert!(b.nodes.iter().all(|n| ids_a.contains(&n.id)));
    }

    #[test]
    fn dropping_gaze_removes_only_attentional_edges(ps in prop::collection::vec(arb_payloads(), 1..6)) {
        let frames = frames_of(ps);
        let cfg = PerceptionConfig::default();
        let with = fold_frames(&frames, &cfg).unwrap();
        let without = fold_frames(&without_gaze(&frames), &cfg).unwrap();
        for (a, b) in with.iter().zip(&without) {
            let kept: BTreeSet<_> = a.edges.iter().filter(|e| e.category != EdgeCategory::Attentional).cloned().collect();
            let other: BTreeSet<_> = b.edges.iter().cloned().collect();
            prop_assert_eq!(kept, other);
            prop_assert_eq!(non_user_nodes(a), non_user_nodes(b));
        }
    }
}

fn arb_profile() -> impl Strategy<Value = NoiseProfile> {
    (
        0.0f64..0.3,
        0.0f64..0.04,
        0.0f64..1.0,
        prop::option::of((0usize..30, 1usize..30)),
    )
        .prop_map(
            |(detection_dropout, position_jitter, spurious_rate, interruption)| NoiseProfile {
                detection_dropout,
                position_jitter,
                spurious_rate,
                interruption: interruption.map(|(start, length)| Interruption {
                    start,
                    length,
                    distractor: "phone".into(),
                }),
            },
        )
}

fn record(template: &str, seed: u64) -> (MemoryStore, String, Vec<EventFrame>) {
    let g = generate_scenario(template, seed).unwrap();
    let mut store = MemoryStore::in_memory();
    let at = Utc.timestamp_opt(RECORDED_AT, 0).unwrap();
    let meta = ingest_recording(
        &mut store,
        g.stream_text().as_bytes(),
        template,
        "lab",
        at,
        &EngineConfig::default(),
    )
    .unwrap();
    (store, meta.id, g.frames)
}

fn ordinal(p: StepPointer, plan: &TaskPlan) -> usize {
    match p {
        StepPointer::Step(k) => k,
        StepPointer::Complete => plan.len(),
    }
}

proptest! {
    #![proptest_config(config(60))]

    #[test]
    fn tracker_and_planner_invariants_under_noise(
        template in prop::sample::select(template_names()),
        seed in 1u64..50,
        profile in arb_profile(),
    ) {
        let (store, id, frames) = record(template, seed);
        let plan = infer_task_plan(&store.load_into_working_memory(&id).unwrap()).unwrap();
        let live = perturb_stream(&frames, &profile, seed);
        let graphs = fold_frames(&live, &PerceptionConfig::default()).unwrap();
        let cfg = TrackerConfig::default();
        let mut state = ProgressState::new(&plan);
        for g in &graphs {
            let next = track_progress(&state, &plan, g, &cfg).unwrap();
            prop_assert!(ordinal(next.current_step, &plan) >= ordinal(state.current_step, &plan));
            if state.off_task && next.off_task {
                prop_assert_eq!(next.current_step, state.current_step);
            }
            prop_assert!((0.0..=1.0).contains(&next.confidence));
            prop_assert!(next.steps_completed() <= plan.len());
            let gg = plan_action(&next, &plan, g);
            prop_assert!(validate_graph(&gg).is_empty());
            prop_assert!(g.is_subgraph_of(&gg));
            state = next;
        }
    }
}

#[test]
fn generated_streams_fold_cleanly_and_deterministically() {
    for name in template_names() {
        for seed in 1..=30 {
            let a = generate_scenario(name, seed).unwrap();
            let b = generate_scenario(name, seed).unwrap();
            assert_eq!(a.stream_text(), b.stream_text());
            assert_eq!(a.ground_truth, b.ground_truth);
            let graphs = fold_frames(&a.frames, &PerceptionConfig::default()).unwrap();
            assert!(graphs.iter().all(|g| validate_graph(g).is_empty()), "{name} {seed}");
        }
    }
}

fn detections(frames: &[EventFrame]) -> usize {
    frames
        .iter()
        .flat_map(|f| &f.events)
        .filter(|e| matches!(e.payload, EventPayload::Detection { .. }))
        .count()
}

#[test]
fn dropout_count_within_binomial_interval() {
    let frames: Vec<EventFrame> = generate_scenario("organize_closet", 9).unwrap().frames;
    let profile = NoiseProfile {
        detection_dropout: 0.1,
        ..NoiseProfile::default()
    };
    let n = detections(&frames) as f64;
    let kept = detections(&perturb_stream(&frames, &profile, 9)) as f64;
    // Two-sided 99% normal approximation.
    let mean = 0.9 * n;
    let half = 2.5758 * (n * 0.9 * 0.1).sqrt();
    assert!(n > 100.0, "too few detections: {n}");
    assert!(
        (kept - mean).abs() <= half,
        "kept {kept} of {n}, interval {mean}±{half}"
    );
}

#[test]
fn noise_keeps_frame_timeline_dense() {
    let frames = generate_scenario("stew_5step", 4).unwrap().frames;
    let profile = NoiseProfile {
        detection_dropout: 0.5,
        position_jitter: 0.05,
        spurious_rate: 2.0,
        interruption: Some(Interruption {
            start: 5,
            length: 7,
            distractor: "phone".into(),
        }),
    };
    let live = perturb_stream(&frames, &profile, 4);
    assert_eq!(live.len(), frames.len() + 7);
    assert!(live.iter().enumerate().all(|(i, f)| f.t == i as u64));
}

fn run_separately(store: &MemoryStore, id: &str, frames: &[EventFrame]) -> Vec<String> {
    let ep = store.load_into_working_memory(id).unwrap();
    let mut s = Session::new("s".into(), &ep, Utc.timestamp_opt(RECORDED_AT, 0).unwrap()).unwrap();
    frames
        .iter()
        .map(|f| {
            let cmds = s.ingest_frame(f, &EngineConfig::default()).unwrap();
            serde_json::to_string(&(s.snapshot(), cmds)).unwrap()
        })
        .collect()
}

#[test]
fn interleaved_sessions_match_separate_runs() {
    let (store_a, id_a, frames_a) = record("stew_5step", 6);
    let (store_b, id_b, frames_b) = record("lab_prep", 6);
    let frames_b = perturb_stream(
        &frames_b,
        &NoiseProfile {
            detection_dropout: 0.1,
            ..NoiseProfile::default()
        },
        6,
    );
    let alone_a = run_separately(&store_a, &id_a, &frames_a);
    let alone_b = run_separately(&store_b, &id_b, &frames_b);
    assert_eq!(alone_a, run_separately(&store_a, &id_a, &frames_a));

    let at = Utc.timestamp_opt(RECORDED_AT, 0).unwrap();
    let mut a = Session::new("s".into(), &store_a.load_into_working_memory(&id_a).unwrap(), at).unwrap();
    let mut b = Session::new("s".into(), &store_b.load_into_working_memory(&id_b).unwrap(), at).unwrap();
    let (mut out_a, mut out_b) = (Vec::new(), Vec::new());
    let cfg = EngineConfig::default();
    for i in 0..frames_a.len().max(frames_b.len()) {
        if let Some(f) = frames_b.get(i) {
            let c = b.ingest_frame(f, &cfg).unwrap();
            out_b.push(serde_json::to_string(&(b.snapshot(), c)).unwrap());
        }
        if let Some(f) = frames_a.get(i) {
            let c = a.ingest_frame(f, &cfg).unwrap();
            out_a.push(serde_json::to_string(&(a.snapshot(), c)).unwrap());
        }
    }
    assert_eq!(out_a, alone_a);
    assert_eq!(out_b, alone_b);
    assert_eq!(
        a.metrics.steps_completed,
        a.progress.satisfied.iter().filter(|&&s| s).count()
    );
}

#[test]
fn own_keyframe_context_ranks_owner_first() {
    let mut store = MemoryStore::in_memory();
    let cfg = EngineConfig::default();
    let mut ids = Vec::new();
    for (i, name) in template_names().into_iter().enumerate() {
        let g = generate_scenario(name, 2).unwrap();
        let at = Utc.timestamp_opt(RECORDED_AT + i as i64, 0).unwrap();
        ids.push(
            ingest_recording(&mut store, g.stream_text().as_bytes(), name, "lab", at, &cfg)
                .unwrap()
                .id,
        );
    }
    for id in &ids {
        let ep = store.load_into_working_memory(id).unwrap();
        for &k in &ep.keyframes {
            let ctx = ep.graphs[k].clone();
            if relation_triples(&ctx, |c| c != EdgeCategory::Guidance).is_empty() {
                continue;
            }
            let hits = store.retrieve(&RetrievalQuery::default().with_context(ctx), 3).unwrap();
            let own = hits.iter().find(|h| &h.meta.id == id).unwrap().score;
            assert!(hits.iter().all(|h| h.score <= own + 1e-12), "keyframe {k} of {id}");
        }
    }
}
