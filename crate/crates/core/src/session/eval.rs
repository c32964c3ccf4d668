//! Replay evaluation over a suite of generated scenarios.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, TimeZone, Utc};
use serde::Serialize;

use super::{ingest_recording, Session, SessionError};
use crate::config::EngineConfig;
use crate::harness::{
    evaluate_run, generate_scenario, perturb_stream, HarnessError, NoiseProfile, RunMetrics, SuiteEntry,
};
use crate::memory::MemoryStore;

/// Fixed recording time so evaluation output does not depend on the clock.
pub const RECORDED_AT: i64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub template: String,
    pub seed: u64,
    pub profile: String,
    /// `None` when the run succeeded.
    pub error: Option<String>,
    pub metrics: Option<RunMetrics>,
    pub frames: usize,
    pub commands_issued: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub runs: usize,
    pub failed: usize,
    pub mean_completion_rate: f64,
    pub mean_boundary_f1: f64,
    pub mean_next_step_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

fn run_one(
    entry: &SuiteEntry,
    profile: &NoiseProfile,
    cfg: &EngineConfig,
) -> Result<(RunMetrics, usize, usize), SessionError> {
    let generated = generate_scenario(&entry.template, entry.seed)?;
    let mut store = MemoryStore::in_memory();
    let recorded_at: DateTime<Utc> = Utc.timestamp_opt(RECORDED_AT, 0).single().expect("valid timestamp");
    let title = format!("{} seed {}", entry.template, entry.seed);
    let meta = ingest_recording(
        &mut store,
        generated.stream_text().as_bytes(),
        &title,
        "lab",
        recorded_at,
        cfg,
    )?;
    let episode = store.load_into_working_memory(&meta.id)?;
    let mut session = Session::new("eval".into(), &episode, recorded_at)?;

    let live = perturb_stream(&generated.frames, profile, entry.seed);
    let mut trace = Vec::with_capacity(live.len());
    for f in &live {
        if let Err(e) = session.ingest_frame(f, cfg) {
            log::warn!(
                "{}/{}/{}: frame t={} rejected: {e}",
                entry.template,
                entry.seed,
                entry.profile,
                f.t
            );
        }
        trace.push(session.trace_frame());
    }
    let truth = match &profile.interruption {
        Some(i) => generated
            .ground_truth
            .with_insertion(i.start.min(generated.frames.len()), i.length),
        None => generated.ground_truth.clone(),
    };
    let metrics = evaluate_run(&truth, &trace)?;
    Ok((metrics, live.len(), session.metrics.commands_issued))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Generates, records and replays every suite entry. Failures become rows
/// with an error and do not stop the suite.
pub fn run_replay_eval(
    entries: &[SuiteEntry],
    profiles: &BTreeMap<String, NoiseProfile>,
    cfg: &EngineConfig,
) -> EvalTable {
    let rows: Vec<EvalRow> = entries
        .iter()
        .map(|entry| {
            let result = match profiles.get(&entry.profile) {
                Some(p) => run_one(entry, p, cfg).map_err(|e| e.to_string()),
                None => Err(HarnessError::UnknownProfile(entry.profile.clone()).to_string()),
            };
            let (error, metrics, frames, commands_issued) = match result {
                Ok((m, frames, cmds)) => (None, Some(m), frames, cmds),
                Err(e) => (Some(e), None, 0, 0),
            };
            EvalRow {
                template: entry.template.clone(),
                seed: entry.seed,
                profile: entry.profile.clone(),
                error,
                metrics,
                frames,
                commands_issued,
            }
        })
        .collect();
    let ok: Vec<&RunMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let summary = EvalSummary {
        runs: rows.len(),
        failed: rows.len() - ok.len(),
        mean_completion_rate: mean(ok.iter().map(|m| m.completion_rate)),
        mean_boundary_f1: mean(ok.iter().map(|m| m.boundary_f1)),
        mean_next_step_accuracy: mean(ok.iter().map(|m| m.next_step_accuracy)),
    };
    EvalTable { rows, summary }
}

impl EvalTable {
    /// Fixed-width text rendering.
    pub fn to_text(&self, fps: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:<12} {:>6} {:>5} {:>9} {:>8} {:>6} {:>8} {:>7} {:>8}",
            "template",
            "seed",
            "profile",
            "frames",
            "steps",
            "complete",
            "done_s",
            "f1",
            "next_acc",
            "offtask",
            "commands"
        );
        for r in &self.rows {
            match (&r.metrics, &r.error) {
                (Some(m), _) => {
                    let done = m
                        .completion_frames
                        .map(|f| format!("{:.1}", f as f64 / fps))
                        .unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        out,
                        "{:<16} {:>5} {:<12} {:>6} {:>2}/{:<2} {:>9.4} {:>8} {:>6.4} {:>8.4} {:>7} {:>8}",
                        r.template,
                        r.seed,
                        r.profile,
                        r.frames,
                        m.steps_completed,
                        m.steps_total,
                        m.completion_rate,
                        done,
                        m.boundary_f1,
                        m.next_step_accuracy,
                        m.off_task_frames,
                        r.commands_issued
                    );
                }
                (None, err) => {
                    let _ = writeln!(
                        out,
                        "{:<16} {:>5} {:<12} FAILED: {}",
                        r.template,
                        r.seed,
                        r.profile,
                        err.as_deref().unwrap_or("unknown error")
                    );
                }
            }
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "runs {} failed {} mean_completion {:.4} mean_f1 {:.4} mean_next_acc {:.4}",
            s.runs, s.failed, s.mean_completion_rate, s.mean_boundary_f1, s.mean_next_step_accuracy
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}
