//! End-to-end checks shared by the integration tests and the acceptance
//! target. Each returns a one-line summary on success and the first failure
//! otherwise.

use std::collections::BTreeSet;
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recallgraph_core::actuator::{feasibility_filter, select_commands, ActuatorConfig, CommandKind, CooldownState};
use recallgraph_core::config::EngineConfig;
use recallgraph_core::harness::{
    builtin_profiles, builtin_suite, generate_scenario, perturb_stream, template_names, Interruption, NoiseProfile,
    TraceFrame,
};
use recallgraph_core::memory::{embed_graph, MemoryStore, RetrievalQuery};
use recallgraph_core::perception::{fold_frames, PerceptionConfig};
use recallgraph_core::reasoning::{
    brute_force_align, infer_task_plan, track_progress, ProgressState, StepPointer, TrackerConfig,
};
use recallgraph_core::scene_graph::{
    apply_diff, canonical_decode, canonical_encode, diff_graphs, fnv1a64, graph_similarity, EdgeKind, EntityId, Node,
    NodeKind, SceneGraph,
};
use recallgraph_core::session::{ingest_recording, run_replay_eval, Session, RECORDED_AT};

use super::arb_graph;

pub type Check = Result<String, String>;

pub const DROP10_GOLDEN: &str = include_str!("../../data/golden/drop10_stew.txt");
pub const EMBEDDING_DIGEST: &str = include_str!("../../data/golden/embeddings.txt");

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Records the clean stream of `(template, seed)` and replays `profile`
/// against it, returning the per-frame trace.
pub fn recall_trace(template: &str, seed: u64, profile: &NoiseProfile) -> Result<Vec<TraceFrame>, String> {
    let cfg = EngineConfig::default();
    let g = generate_scenario(template, seed).map_err(|e| e.to_string())?;
    let mut store = MemoryStore::in_memory();
    let at = Utc.timestamp_opt(RECORDED_AT, 0).unwrap();
    let meta = ingest_recording(&mut store, g.stream_text().as_bytes(), template, "lab", at, &cfg)
        .map_err(|e| e.to_string())?;
    let ep = store.load_into_working_memory(&meta.id).map_err(|e| e.to_string())?;
    let mut session = Session::new("check".into(), &ep, at).map_err(|e| e.to_string())?;
    let mut trace = Vec::new();
    for f in perturb_stream(&g.frames, profile, seed) {
        session.ingest_frame(&f, &cfg).map_err(|e| format!("t={}: {e}", f.t))?;
        trace.push(session.trace_frame());
    }
    Ok(trace)
}

pub fn replay_identity() -> Check {
    let start = Instant::now();
    let entries = builtin_suite("clean").ok_or("clean suite missing")?;
    let table = run_replay_eval(&entries, &builtin_profiles(), &EngineConfig::default());
    let elapsed = start.elapsed().as_secs_f64();
    for r in &table.rows {
        let name = format!("{} seed {}", r.template, r.seed);
        let m = r
            .metrics
            .as_ref()
            .ok_or_else(|| format!("{name}: {}", r.error.clone().unwrap_or_default()))?;
        ensure(m.completion_rate == 1.0, || {
            format!("{name}: completion rate {}", m.completion_rate)
        })?;
        ensure(m.off_task_frames == 0, || {
            format!("{name}: {} off-task frames", m.off_task_frames)
        })?;
        ensure(m.completion_frames.is_some(), || {
            format!("{name}: never reached complete")
        })?;
    }
    let templates: BTreeSet<&str> = table.rows.iter().map(|r| r.template.as_str()).collect();
    ensure(templates.len() == 3 && table.rows.len() == 30, || {
        format!("suite has {} rows", table.rows.len())
    })?;
    ensure(elapsed < 60.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "{} runs complete, 0 off-task frames, {elapsed:.2} s",
        table.rows.len()
    ))
}

pub fn oracle_equivalence() -> Check {
    let cfg = TrackerConfig::default();
    let mut cases = 0;
    for name in template_names() {
        for seed in 1..=20 {
            let g = generate_scenario(name, seed).map_err(|e| e.to_string())?;
            let graphs = fold_frames(&g.frames, &PerceptionConfig::default()).map_err(|e| e.to_string())?;
            let mut store = MemoryStore::in_memory();
            let meta = store
                .store_episode(&graphs, name, "lab", Utc.timestamp_opt(RECORDED_AT, 0).unwrap())
                .map_err(|e| e.to_string())?;
            let plan = infer_task_plan(&store.load_into_working_memory(&meta.id).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            if plan.len() > 8 || graphs.len() > 200 {
                continue;
            }
            let mut state = ProgressState::new(&plan);
            for gr in &graphs {
                state = track_progress(&state, &plan, gr, &cfg).map_err(|e| e.to_string())?;
            }
            let al = brute_force_align(&plan, &graphs).map_err(|e| e.to_string())?;
            ensure(al.covered == state.satisfied, || {
                format!(
                    "{name} seed {seed}: tracker {:?} vs oracle {:?}",
                    state.satisfied, al.covered
                )
            })?;
            cases += 1;
        }
    }
    Ok(format!("{cases}/{cases} clean streams agree"))
}

pub fn noise_robustness() -> Check {
    let entries = builtin_suite("drop10").ok_or("drop10 suite missing")?;
    let table = run_replay_eval(&entries, &builtin_profiles(), &EngineConfig::default());
    let s = &table.summary;
    ensure(s.failed == 0, || format!("{} failed rows", s.failed))?;
    ensure(s.mean_completion_rate >= 0.9, || {
        format!("mean completion {:.4}", s.mean_completion_rate)
    })?;
    ensure(s.mean_next_step_accuracy >= 0.85, || {
        format!("mean next-step accuracy {:.4}", s.mean_next_step_accuracy)
    })?;
    let text = table.to_text(EngineConfig::default().frames_per_second);
    if text != DROP10_GOLDEN {
        let line = text
            .lines()
            .zip(DROP10_GOLDEN.lines())
            .position(|(a, b)| a != b)
            .map(|i| i + 1)
            .unwrap_or(text.lines().count().min(DROP10_GOLDEN.lines().count()) + 1);
        return Err(format!("table differs from golden file at line {line}"));
    }
    Ok(format!(
        "mean completion {:.4}, next-step accuracy {:.4}, golden table identical",
        s.mean_completion_rate, s.mean_next_step_accuracy
    ))
}

fn interruption(start: usize, length: usize) -> NoiseProfile {
    NoiseProfile {
        interruption: Some(Interruption {
            start,
            length,
            distractor: "phone".into(),
        }),
        ..NoiseProfile::default()
    }
}

fn ordinal(p: StepPointer, total: usize) -> usize {
    match p {
        StepPointer::Step(k) => k,
        StepPointer::Complete => total,
    }
}

/// Short interruptions never flag off-task or move the pointer back; long
/// ones flag it and the pointer holds still while flagged.
pub fn interruption_tolerance(starts: &[usize]) -> Check {
    let mut runs = 0;
    for seed in 1..=20 {
        for &start in starts {
            let short = recall_trace("stew_5step", seed, &interruption(start, 15))?;
            let total = short[0].satisfied.len();
            let mut last = 0;
            for (f, tf) in short.iter().enumerate() {
                ensure(!tf.off_task, || {
                    format!("15-frame interruption at {start}, seed {seed}: off-task at frame {f}")
                })?;
                let k = ordinal(tf.current_step, total);
                ensure(k >= last, || format!("seed {seed}: pointer regressed at frame {f}"))?;
                last = k;
            }

            let long = recall_trace("stew_5step", seed, &interruption(start, 25))?;
            let first = long
                .iter()
                .position(|tf| tf.off_task)
                .ok_or_else(|| format!("25-frame interruption at {start}, seed {seed}: never flagged"))?;
            ensure(first < start + 25, || {
                format!("seed {seed}: flagged only after the interruption")
            })?;
            let frozen = long[first].current_step;
            for (f, tf) in long.iter().enumerate().skip(first) {
                if !tf.off_task {
                    break;
                }
                ensure(tf.current_step == frozen, || {
                    format!("seed {seed}: pointer moved while off-task at frame {f}")
                })?;
            }
            runs += 2;
        }
    }
    Ok(format!(
        "{runs} runs: 15-frame never off-task, 25-frame always flagged and frozen"
    ))
}

/// Episodes with three-word titles drawn from disjoint vocabularies, so a
/// full-title query cannot match a different title.
/// `(id, title, location)` of a stored episode.
type Stored = (String, String, String);

fn retrieval_store() -> Result<(MemoryStore, Vec<Stored>), String> {
    const ADJ: [&str; 8] = [
        "quick", "sunday", "spicy", "weekly", "careful", "morning", "big", "gentle",
    ];
    const TASK: [&str; 10] = [
        "stew",
        "laundry",
        "closet",
        "titration",
        "soup",
        "buffer",
        "shelf",
        "curry",
        "pipetting",
        "drawer",
    ];
    const WHO: [&str; 8] = ["mom", "dad", "lab", "granny", "roommate", "team", "chef", "me"];
    const LOC: [&str; 4] = ["kitchen", "bedroom", "lab", "garage"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = MemoryStore::in_memory();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let base = Utc.timestamp_opt(RECORDED_AT, 0).unwrap();
    let templates = template_names();
    while out.len() < 50 {
        let title = format!(
            "{} {} {}",
            ADJ.choose(&mut rng).unwrap(),
            TASK.choose(&mut rng).unwrap(),
            WHO.choose(&mut rng).unwrap()
        );
        let location = LOC.choose(&mut rng).unwrap().to_string();
        if !seen.insert(title.clone()) {
            continue;
        }
        let i = out.len();
        let g = generate_scenario(templates[i % templates.len()], i as u64 + 1).map_err(|e| e.to_string())?;
        let at = base + Duration::minutes(rng.random_range(0..100_000));
        let meta = ingest_recording(
            &mut store,
            g.stream_text().as_bytes(),
            &title,
            &location,
            at,
            &EngineConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        out.push((meta.id, title, location));
    }
    Ok((store, out))
}

/// Brute-force re-scoring used as the ranking oracle.
fn oracle_rank(store: &MemoryStore, q: &RetrievalQuery, k: usize) -> Vec<(String, f64)> {
    let words: Vec<String> = q.keywords.iter().map(|w| w.to_lowercase()).collect();
    let ctx = q.context.as_ref().map(embed_graph);
    let mut rows: Vec<_> = store
        .entries()
        .filter(|e| q.location.as_ref().is_none_or(|l| *l == e.meta.location))
        .map(|e| {
            let title: Vec<String> = e.meta.title.split(' ').map(str::to_lowercase).collect();
            let t = if words.is_empty() {
                None
            } else {
                Some(words.iter().filter(|w| title.contains(w)).count() as f64 / words.len() as f64)
            };
            let s = ctx.as_ref().map(|c| {
                let dot: f64 = c.values().iter().zip(e.embedding.values()).map(|(a, b)| a * b).sum();
                let n = c.norm() * e.embedding.norm();
                if n == 0.0 {
                    0.0
                } else {
                    (dot / n).max(0.0)
                }
            });
            let score = match (t, s) {
                (Some(t), Some(s)) => 0.6 * t + 0.4 * s,
                (Some(t), None) => t,
                (None, Some(s)) => s,
                (None, None) => 1.0,
            };
            (e.meta.id.clone(), score, e.meta.recorded_at)
        })
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    rows.into_iter().take(k).map(|(id, s, _)| (id, s)).collect()
}

pub fn retrieval() -> Check {
    let (store, episodes) = retrieval_store()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut top1, mut top3, mut oracle_queries) = (0, 0, 0);
    for (id, title, location) in &episodes {
        let words: Vec<&str> = title.split(' ').collect();
        let q = RetrievalQuery::keywords(&words).at(location.clone());
        let hits = store.retrieve(&q, 1).map_err(|e| e.to_string())?;
        top1 += usize::from(hits.first().is_some_and(|h| &h.meta.id == id));

        let drop = rng.random_range(0..words.len());
        let partial: Vec<&str> = words
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, w)| *w)
            .collect();
        let q2 = RetrievalQuery::keywords(&partial);
        let hits = store.retrieve(&q2, 3).map_err(|e| e.to_string())?;
        top3 += usize::from(hits.iter().any(|h| &h.meta.id == id));

        let ep = store.load_into_working_memory(id).map_err(|e| e.to_string())?;
        let ctx = ep.graphs[rng.random_range(0..ep.graphs.len())].clone();
        let mixed = [
            q.clone(),
            q2.clone(),
            RetrievalQuery::keywords(&[words[1]]).with_context(ctx.clone()),
            RetrievalQuery::default().with_context(ctx).at(location.clone()),
            RetrievalQuery::default().at(location.clone()),
        ];
        for mq in &mixed {
            let got: Vec<(String, f64)> = store
                .retrieve(mq, 5)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|s| (s.meta.id, s.score))
                .collect();
            let want = oracle_rank(&store, mq, 5);
            let same = got.len() == want.len()
                && got
                    .iter()
                    .zip(&want)
                    .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12);
            ensure(same, || format!("ranking differs from oracle for {mq:?}"))?;
            oracle_queries += 1;
        }
    }
    let n = episodes.len();
    let r1 = top1 as f64 / n as f64;
    let r3 = top3 as f64 / n as f64;
    ensure(r1 == 1.0, || format!("keyword+location top-1 {r1:.2}"))?;
    ensure(r3 >= 0.95, || format!("keyword-only top-3 {r3:.2}"))?;
    Ok(format!(
        "{n} episodes: top-1 {r1:.2}, top-3 {r3:.2}, {oracle_queries} rankings match the oracle"
    ))
}

fn run_property<S: Strategy>(
    cases: u32,
    seed: u64,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn encode(g: &SceneGraph) -> Result<Vec<u8>, TestCaseError> {
    canonical_encode(g).map_err(|e| TestCaseError::fail(e.to_string()))
}

/// Digest of the embedding bits of every template and seed 1 to 5.
pub fn embedding_digest() -> Result<String, String> {
    let mut lines = String::new();
    for name in template_names() {
        for seed in 1..=5 {
            let g = generate_scenario(name, seed).map_err(|e| e.to_string())?;
            let mut store = MemoryStore::in_memory();
            let meta = ingest_recording(
                &mut store,
                g.stream_text().as_bytes(),
                name,
                "lab",
                Utc.timestamp_opt(RECORDED_AT, 0).unwrap(),
                &EngineConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            let entry = store.entries().find(|e| e.meta.id == meta.id).ok_or("entry missing")?;
            let bytes: Vec<u8> = entry
                .embedding
                .values()
                .iter()
                .flat_map(|v| v.to_bits().to_le_bytes())
                .collect();
            lines.push_str(&format!("{name}\t{seed}\t{:016x}\n", fnv1a64(&bytes)));
        }
    }
    Ok(lines)
}

pub fn graph_laws() -> Check {
    run_property(1000, 42, (arb_graph(), arb_graph()), |(a, b)| {
        let d = diff_graphs(&a, &b).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let patched = apply_diff(&a, &d).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(encode(&patched)?, encode(&b)?);
        Ok(())
    })
    .map_err(|e| format!("diff round-trip: {e}"))?;
    run_property(1000, 43, arb_graph(), |g| {
        let bytes = encode(&g)?;
        let decoded = canonical_decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(encode(&decoded.graph)?, bytes);
        Ok(())
    })
    .map_err(|e| format!("codec round-trip: {e}"))?;
    run_property(1000, 44, (arb_graph(), arb_graph()), |(a, b)| {
        let s = graph_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s.to_bits(), graph_similarity(&b, &a).to_bits());
        prop_assert_eq!(graph_similarity(&a, &a), 1.0);
        Ok(())
    })
    .map_err(|e| format!("similarity: {e}"))?;
    let first = embedding_digest()?;
    let second = embedding_digest()?;
    ensure(first == second, || "embeddings differ between two runs".into())?;
    ensure(first == EMBEDDING_DIGEST, || {
        "embeddings differ from the committed digest".into()
    })?;
    Ok("1000 diff and 1000 codec round-trips, 1000 similarity pairs, embeddings stable".into())
}

const LABELS: [&str; 5] = ["onion", "pot", "spoon", "shirt", "rack"];

/// A random perceived scene and a guidance graph that points at visible,
/// invisible and virtual nodes alike.
fn random_case(rng: &mut ChaCha8Rng, t: u64) -> (SceneGraph, SceneGraph) {
    let user = Node::new(EntityId::user(), NodeKind::User, "user");
    let mut scene = SceneGraph::new(t).with_node(user.clone());
    let mut guidance = SceneGraph::new(t).with_node(user);
    for label in LABELS {
        let node = Node::new(EntityId::new(label).unwrap(), NodeKind::Object, label);
        match rng.random_range(0..3) {
            0 => {
                scene.nodes.push(node.clone());
                guidance.nodes.push(node);
            }
            1 => guidance.nodes.push(node),
            _ => {
                let id = EntityId::new(format!("virtual.{label}")).unwrap();
                guidance
                    .nodes
                    .push(Node::new(id, NodeKind::Object, label).with_attribute("virtual", "true"));
            }
        }
    }
    let kinds = [EdgeKind::ToBeGrasped, EdgeKind::Notify, EdgeKind::Find];
    let targets: Vec<EntityId> = guidance.nodes.iter().skip(1).map(|n| n.id.clone()).collect();
    for target in &targets {
        if rng.random_bool(0.6) {
            let kind = *kinds.choose(rng).unwrap();
            guidance = guidance.with_edge("user", kind, target.as_str());
        }
    }
    (scene, guidance)
}

pub fn actuator_safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ActuatorConfig::default();
    let mut cooldown = CooldownState::new();
    let mut highlights = 0;
    for case in 0..10_000u64 {
        let (scene, guidance) = random_case(&mut rng, case);
        let cmds = feasibility_filter(select_commands(&guidance, &mut cooldown, &cfg), &scene);
        for c in cmds.iter().filter(|c| c.kind == CommandKind::Highlight) {
            let node = c.target.as_ref().and_then(|id| scene.node(id));
            ensure(node.is_some_and(|n| !n.is_virtual()), || {
                format!("case {case}: unsafe highlight {c:?}")
            })?;
            highlights += 1;
        }
        ensure(
            cmds.iter().filter(|c| c.kind == CommandKind::Highlight).count() <= 1,
            || format!("case {case}: more than one highlight"),
        )?;
        ensure(cmds.iter().all(|c| c.is_well_formed()), || {
            format!("case {case}: malformed command")
        })?;
    }
    ensure(highlights > 0, || "sweep never produced a highlight".into())?;

    let (scene, guidance) = loop {
        let (s, g) = random_case(&mut rng, 0);
        if !select_commands(&g, &mut CooldownState::new(), &cfg).is_empty() {
            break (s, g);
        }
    };
    let mut cooldown = CooldownState::new();
    let mut emitted = Vec::new();
    for t in 0..=cfg.cooldown {
        let mut g = guidance.clone();
        g.t = t;
        emitted.push(feasibility_filter(select_commands(&g, &mut cooldown, &cfg), &scene).len());
    }
    ensure(emitted[0] > 0, || "first guidance emitted nothing".into())?;
    ensure(emitted[1..cfg.cooldown as usize].iter().all(|&n| n == 0), || {
        format!("repeats not suppressed: {emitted:?}")
    })?;
    ensure(emitted[cfg.cooldown as usize] == emitted[0], || {
        format!("not re-issued after cooldown: {emitted:?}")
    })?;
    Ok(format!(
        "10000 cases, {highlights} highlights all visible and real, cooldown suppresses repeats"
    ))
}
