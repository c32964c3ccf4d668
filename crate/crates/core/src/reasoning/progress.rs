//! Online progress tracking against a task plan.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{physical_triples, ReasoningError, TaskPlan, Triple};
use crate::scene_graph::{validate_graph, SceneGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Working-memory capacity in frames.
    pub w_mem: usize,
    /// Frames whose union must cover a step's required triples.
    pub w_sat: usize,
    /// Frames a step may lag behind a satisfied successor before it is skipped.
    pub w_skip: usize,
    /// Consecutive plan-irrelevant frames before off-task is flagged.
    pub w_off: usize,
    /// Smoothing weight of new evidence.
    pub alpha: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            w_mem: 30,
            w_sat: 5,
            w_skip: 10,
            w_off: 20,
            alpha: 0.3,
        }
    }
}

/// Index of the step being worked on, or the end of the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepPointer {
    Step(usize),
    Complete,
}

impl StepPointer {
    pub fn index(self) -> Option<usize> {
        match self {
            StepPointer::Step(k) => Some(k),
            StepPointer::Complete => None,
        }
    }

    pub fn is_complete(self) -> bool {
        self == StepPointer::Complete
    }

    /// Position along the plan, `n` when complete.
    pub fn ordinal(self, n: usize) -> usize {
        self.index().unwrap_or(n)
    }
}

impl fmt::Display for StepPointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepPointer::Step(k) => write!(f, "{k}"),
            StepPointer::Complete => f.write_str("complete"),
        }
    }
}

impl Serialize for StepPointer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StepPointer::Step(k) => s.serialize_u64(*k as u64),
            StepPointer::Complete => s.serialize_str("complete"),
        }
    }
}

impl<'de> Deserialize<'de> for StepPointer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(k) => Ok(StepPointer::Step(k)),
            Raw::S(s) if s == "complete" => Ok(StepPointer::Complete),
            Raw::S(s) => Err(serde::de::Error::custom(format!("invalid step pointer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressState {
    pub current_step: StepPointer,
    pub satisfied: Vec<bool>,
    /// Steps marked satisfied because a later step overtook them.
    pub skipped: Vec<bool>,
    pub off_task: bool,
    pub idle_frames: usize,
    pub confidence: f64,
    pub history: VecDeque<BTreeSet<Triple>>,
    /// Union of the most recent satisfaction window.
    pub window: BTreeSet<Triple>,
    /// Frames since the successor of the current step was latched.
    pub skip_wait: Option<usize>,
    pub frames_seen: usize,
    pub last_t: Option<u64>,
}

impl ProgressState {
    pub fn new(plan: &TaskPlan) -> Self {
        let n = plan.steps.len();
        Self {
            current_step: if n == 0 {
                StepPointer::Complete
            } else {
                StepPointer::Step(0)
            },
            satisfied: vec![false; n],
            skipped: vec![false; n],
            off_task: false,
            idle_frames: 0,
            confidence: 0.0,
            history: VecDeque::new(),
            window: BTreeSet::new(),
            skip_wait: None,
            frames_seen: 0,
            last_t: None,
        }
    }

    pub fn steps_completed(&self) -> usize {
        self.satisfied.iter().filter(|&&s| s).count()
    }

    /// Required triples of `step` not covered by the current window.
    pub fn missing<'a>(&'a self, plan: &'a TaskPlan, step: usize) -> impl Iterator<Item = &'a Triple> {
        plan.steps[step]
            .required_triples
            .iter()
            .filter(|t| !self.window.contains(*t))
    }

    fn check(&self, plan: &TaskPlan) -> Result<(), ReasoningError> {
        let n = plan.steps.len();
        if self.satisfied.len() != n || self.skipped.len() != n {
            return Err(ReasoningError::InconsistentState(format!(
                "state tracks {} steps, plan has {n}",
                self.satisfied.len()
            )));
        }
        if let StepPointer::Step(k) = self.current_step {
            if k >= n {
                return Err(ReasoningError::InconsistentState(format!(
                    "current step {k} out of range"
                )));
            }
            if self.satisfied[..k].iter().any(|s| !s) {
                return Err(ReasoningError::InconsistentState(
                    "a step before the current one is unsatisfied".into(),
                ));
            }
        }
        Ok(())
    }
}

fn covered(plan: &TaskPlan, k: usize, window: &BTreeSet<Triple>) -> bool {
    plan.steps[k].required_triples.is_subset(window)
}

fn next(plan: &TaskPlan, k: usize) -> StepPointer {
    if k + 1 < plan.steps.len() {
        StepPointer::Step(k + 1)
    } else {
        StepPointer::Complete
    }
}

/// Folds one observed graph into the progress state.
///
/// Returns the updated state; an invalid graph or a state that does not match
/// `plan` is rejected and the input state is left as it was.
pub fn track_progress(
    state: &ProgressState,
    plan: &TaskPlan,
    g: &SceneGraph,
    cfg: &TrackerConfig,
) -> Result<ProgressState, ReasoningError> {
    state.check(plan)?;
    let violations = validate_graph(g);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(ReasoningError::InvalidGraph(text.join("; ")));
    }

    let mut s = state.clone();
    let observed = physical_triples(g);
    let focus = plan.focus_entities();
    let relevant = observed
        .iter()
        .any(|(a, _, b)| focus.contains(a.as_str()) || focus.contains(b.as_str()));
    s.history.push_back(observed);
    while s.history.len() > cfg.w_mem.max(1) {
        s.history.pop_front();
    }
    s.frames_seen += 1;
    s.last_t = Some(g.t);

    if relevant {
        s.idle_frames = 0;
        s.off_task = false;
    } else {
        s.idle_frames += 1;
        if s.idle_frames >= cfg.w_off {
            s.off_task = true;
        }
    }

    s.window = s
        .history
        .iter()
        .rev()
        .take(cfg.w_sat.max(1))
        .flat_map(|h| h.iter().cloned())
        .collect();

    let ratio = match s.current_step {
        StepPointer::Complete => 1.0,
        StepPointer::Step(k) => {
            let req = &plan.steps[k].required_triples;
            if req.is_empty() {
                1.0
            } else {
                req.intersection(&s.window).count() as f64 / req.len() as f64
            }
        }
    };
    s.confidence = ((1.0 - cfg.alpha) * s.confidence + cfg.alpha * ratio).clamp(0.0, 1.0);

    if !s.off_task {
        advance(&mut s, plan, cfg);
    }
    Ok(s)
}

fn advance(s: &mut ProgressState, plan: &TaskPlan, cfg: &TrackerConfig) {
    let mut counted = false;
    while let StepPointer::Step(k) = s.current_step {
        if s.satisfied[k] || covered(plan, k, &s.window) {
            s.satisfied[k] = true;
            s.current_step = next(plan, k);
            s.skip_wait = None;
            continue;
        }
        if k + 1 < plan.steps.len() {
            if !s.satisfied[k + 1] && covered(plan, k + 1, &s.window) {
                s.satisfied[k + 1] = true;
                s.skip_wait = Some(0);
                break;
            }
            if s.satisfied[k + 1] {
                if !counted {
                    s.skip_wait = Some(s.skip_wait.unwrap_or(0) + 1);
                    counted = true;
                }
                if s.skip_wait.unwrap_or(0) >= cfg.w_skip {
                    s.satisfied[k] = true;
                    s.skipped[k] = true;
                    s.current_step = next(plan, k);
                    s.skip_wait = None;
                    continue;
                }
            }
        }
        break;
    }
}
