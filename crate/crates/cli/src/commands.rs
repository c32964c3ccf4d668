use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use recallgraph_core::actuator::{ActuationCommand, CommandKind};
use recallgraph_core::config::EngineConfig;
use recallgraph_core::harness::{
    builtin_profiles, builtin_suite, builtin_suite_names, parse_profiles, parse_suite, NoiseProfile, SuiteEntry,
};
use recallgraph_core::perception::{parse_event_stream, EventFrame};
use recallgraph_core::session::{run_replay_eval, EvalTable, SessionManager, SessionQuery, Snapshot};

/// Resolves `suite` as a bundled suite name or a path to a suite file.
pub fn load_suite(suite: &str) -> Result<Vec<SuiteEntry>> {
    if let Some(entries) = builtin_suite(suite) {
        return Ok(entries);
    }
    let path = Path::new(suite);
    if !path.exists() {
        bail!(
            "no suite named {suite:?} and no such file (bundled suites: {})",
            builtin_suite_names().join(", ")
        );
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_suite(&text)?)
}

/// Bundled noise profiles, overridden by those in `extra` if given.
pub fn load_profiles(extra: Option<&Path>) -> Result<BTreeMap<String, NoiseProfile>> {
    let mut profiles = builtin_profiles();
    if let Some(path) = extra {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        profiles.extend(parse_profiles(&text)?);
    }
    Ok(profiles)
}

pub fn eval(
    suite: &str,
    seed: Option<u64>,
    profiles: &BTreeMap<String, NoiseProfile>,
    cfg: &EngineConfig,
) -> Result<EvalTable> {
    let mut entries = load_suite(suite)?;
    if let Some(seed) = seed {
        for e in &mut entries {
            e.seed = seed;
        }
    }
    Ok(run_replay_eval(&entries, profiles, cfg))
}

pub fn describe_command(c: &ActuationCommand) -> String {
    let target = c.target.as_ref().map(|t| t.as_str()).unwrap_or("-");
    let text = c.text.as_deref().unwrap_or("");
    match c.kind {
        CommandKind::Highlight => format!("highlight {target}"),
        CommandKind::Voice => format!("voice {text:?}"),
        CommandKind::Tip => format!("tip@{target} {text:?}"),
    }
}

fn status_line(snap: &Snapshot) -> String {
    let step = match snap.current_step {
        recallgraph_core::reasoning::StepPointer::Step(k) => snap
            .steps
            .get(k)
            .map(|s| format!("step {}/{} {}", k + 1, snap.steps.len(), s.description))
            .unwrap_or_default(),
        recallgraph_core::reasoning::StepPointer::Complete => "complete".to_string(),
    };
    let t = snap.last_t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
    let off = if snap.off_task { " [off task]" } else { "" };
    format!("t={t} {step} conf={:.2}{off}", snap.confidence)
}

/// Writes one status line per frame plus the commands it produced.
fn report(out: &mut impl Write, snap: &Snapshot, cmds: &[ActuationCommand], json: bool) -> Result<()> {
    if json {
        let line = serde_json::json!({ "snapshot": snap, "commands": cmds });
        writeln!(out, "{line}")?;
    } else {
        writeln!(out, "{}", status_line(snap))?;
        for c in cmds {
            writeln!(out, "  {}", describe_command(c))?;
        }
    }
    Ok(())
}

fn start(manager: &SessionManager, episode_id: &str) -> Result<String> {
    let outcome = manager.create_session(&SessionQuery {
        episode_id: Some(episode_id.to_string()),
        ..SessionQuery::default()
    })?;
    Ok(outcome.session.context("session was not started")?.session_id)
}

fn feed(manager: &SessionManager, id: &str, frames: &[EventFrame], out: &mut impl Write, json: bool) -> Result<()> {
    for f in frames {
        let r = manager.ingest_frames(id, std::slice::from_ref(f))?;
        for rej in &r.rejected {
            writeln!(out, "t={} rejected: {}", rej.t, rej.error)?;
        }
        if r.rejected.is_empty() {
            report(out, &r.snapshot, &r.commands, json)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Replays a recorded event file against `episode_id`. Returns the final snapshot.
pub fn recall_file(
    manager: &SessionManager,
    episode_id: &str,
    events: &[u8],
    out: &mut impl Write,
    json: bool,
) -> Result<Snapshot> {
    let id = start(manager, episode_id)?;
    let parsed = parse_event_stream(events)?;
    feed(manager, &id, &parsed.frames, out, json)?;
    Ok(manager.snapshot(&id)?)
}

fn line_t(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("t")?.as_u64()
}

/// Reads event lines from `input`; a frame is processed as soon as a line
/// with a different timestamp or a blank line arrives.
pub fn recall_interactive<W: Write>(
    manager: &SessionManager,
    episode_id: &str,
    input: impl BufRead,
    out: &mut W,
    json: bool,
) -> Result<Snapshot> {
    let id = start(manager, episode_id)?;
    let mut pending = String::new();
    let mut pending_t = None;
    let flush = |pending: &mut String, out: &mut W| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        match parse_event_stream(pending.as_bytes()) {
            Ok(parsed) => feed(manager, &id, &parsed.frames, out, json)?,
            Err(e) => writeln!(out, "rejected: {e}")?,
        }
        pending.clear();
        Ok(())
    };
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut pending, out)?;
            pending_t = None;
            continue;
        }
        let t = line_t(trimmed);
        if pending_t.is_some() && t != pending_t {
            flush(&mut pending, out)?;
        }
        pending_t = t;
        pending.push_str(trimmed);
        pending.push('\n');
    }
    flush(&mut pending, out)?;
    Ok(manager.snapshot(&id)?)
}
