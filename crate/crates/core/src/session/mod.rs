//! Recall sessions: the perception, tracking, guidance and actuation loop.

mod eval;
mod manager;

use chrono::{DateTime, Utc};
use serde::Serialize;

pub use eval::{run_replay_eval, EvalRow, EvalSummary, EvalTable, RECORDED_AT};
pub use manager::{ingest_recording, CreateOutcome, SessionManager, SessionQuery, DEFAULT_CANDIDATES};

use crate::actuator::{feasibility_filter, select_commands, ActuationCommand, CooldownState};
use crate::config::EngineConfig;
use crate::harness::{HarnessError, TraceFrame};
use crate::memory::{Episode, MemoryError};
use crate::perception::{build_scene_graph, EventFrame, PerceptionError, StreamError};
use crate::reasoning::{
    infer_task_plan, plan_action, track_progress, ProgressState, ReasoningError, StepPointer, TaskPlan,
};
use crate::scene_graph::{canonical_encode, SceneGraph};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no stored episode matches the query")]
    NoMatchingEpisode,
    #[error("recording contains no frames")]
    EmptyRecording,
    #[error("event stream: {0}")]
    Stream(#[from] StreamError),
    #[error("perception: {0}")]
    Perception(#[from] PerceptionError),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("reasoning: {0}")]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricsRecord {
    pub steps_total: usize,
    pub steps_completed: usize,
    pub frames_elapsed: usize,
    pub off_task_frames: usize,
    pub commands_issued: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Satisfied,
    Skipped,
    Current,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepView {
    pub index: usize,
    pub description: String,
    pub status: StepStatus,
}

/// What a client needs to render the session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub session_id: String,
    pub episode_id: String,
    pub episode_title: String,
    pub current_step: StepPointer,
    pub steps: Vec<StepView>,
    pub off_task: bool,
    pub confidence: f64,
    pub metrics: MetricsRecord,
    pub last_t: Option<u64>,
    /// Latest guidance graph in canonical form.
    pub graph: Option<serde_json::Value>,
    pub commands: Vec<ActuationCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedFrame {
    pub t: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestResult {
    pub snapshot: Snapshot,
    pub commands: Vec<ActuationCommand>,
    pub rejected: Vec<RejectedFrame>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub episode_id: String,
    pub episode_title: String,
    pub plan: TaskPlan,
    pub progress: ProgressState,
    /// Last perceived graph, carried into the next frame.
    pub last_graph: Option<SceneGraph>,
    pub last_guidance: Option<SceneGraph>,
    pub last_commands: Vec<ActuationCommand>,
    pub cooldown: CooldownState,
    pub started_at: DateTime<Utc>,
    pub metrics: MetricsRecord,
}

impl Session {
    pub fn new(id: String, episode: &Episode, started_at: DateTime<Utc>) -> Result<Self, SessionError> {
        let plan = infer_task_plan(episode)?;
        let progress = ProgressState::new(&plan);
        Ok(Self {
            id,
            episode_id: episode.meta.id.clone(),
            episode_title: episode.meta.title.clone(),
            metrics: MetricsRecord {
                steps_total: plan.len(),
                ..MetricsRecord::default()
            },
            plan,
            progress,
            last_graph: None,
            last_guidance: None,
            last_commands: Vec::new(),
            cooldown: CooldownState::new(),
            started_at,
        })
    }

    /// Runs one frame through the loop. On error nothing is changed.
    pub fn ingest_frame(
        &mut self,
        frame: &EventFrame,
        cfg: &EngineConfig,
    ) -> Result<Vec<ActuationCommand>, SessionError> {
        let perceived = build_scene_graph(frame, self.last_graph.as_ref(), &cfg.perception)?;
        let g = perceived.graph;
        let progress = track_progress(&self.progress, &self.plan, &g, &cfg.tracking)?;
        let guidance = plan_action(&progress, &self.plan, &g);
        let mut cooldown = self.cooldown.clone();
        let cmds = feasibility_filter(select_commands(&guidance, &mut cooldown, &cfg.actuator), &g);

        self.metrics.frames_elapsed += 1;
        if progress.off_task {
            self.metrics.off_task_frames += 1;
        }
        self.metrics.steps_completed = progress.steps_completed();
        self.metrics.commands_issued += cmds.len();
        self.progress = progress;
        self.cooldown = cooldown;
        self.last_graph = Some(g);
        self.last_guidance = Some(guidance);
        self.last_commands = cmds.clone();
        Ok(cmds)
    }

    /// Processes frames in order; rejected frames are reported and skipped.
    pub fn ingest_events(&mut self, frames: &[EventFrame], cfg: &EngineConfig) -> IngestResult {
        let mut commands = Vec::new();
        let mut rejected = Vec::new();
        for f in frames {
            match self.ingest_frame(f, cfg) {
                Ok(c) => commands.extend(c),
                Err(e) => {
                    log::warn!("session {}: frame t={} rejected: {e}", self.id, f.t);
                    rejected.push(RejectedFrame {
                        t: f.t,
                        error: e.to_string(),
                    });
                }
            }
        }
        IngestResult {
            snapshot: self.snapshot(),
            commands,
            rejected,
        }
    }

    pub fn trace_frame(&self) -> TraceFrame {
        TraceFrame {
            current_step: self.progress.current_step,
            satisfied: self.progress.satisfied.clone(),
            off_task: self.progress.off_task,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let p = &self.progress;
        let steps = self
            .plan
            .steps
            .iter()
            .map(|s| StepView {
                index: s.index,
                description: s.description.clone(),
                status: if p.skipped[s.index] {
                    StepStatus::Skipped
                } else if p.satisfied[s.index] {
                    StepStatus::Satisfied
                } else if p.current_step == StepPointer::Step(s.index) {
                    StepStatus::Current
                } else {
                    StepStatus::Pending
                },
            })
            .collect();
        let graph = self
            .last_guidance
            .as_ref()
            .and_then(|g| canonical_encode(g).ok())
            .and_then(|b| serde_json::from_slice(&b).ok());
        Snapshot {
            session_id: self.id.clone(),
            episode_id: self.episode_id.clone(),
            episode_title: self.episode_title.clone(),
            current_step: p.current_step,
            steps,
            off_task: p.off_task,
            confidence: p.confidence,
            metrics: self.metrics.clone(),
            last_t: p.last_t,
            graph,
            commands: self.last_commands.clone(),
        }
    }
}
