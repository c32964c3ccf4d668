//! Plan inference, progress tracking and guidance planning.

mod align;
mod guidance;
mod plan;
mod progress;

use std::collections::BTreeSet;

pub use align::{brute_force_align, Alignment, MAX_ALIGN_FRAMES, MAX_ALIGN_STEPS};
pub use guidance::{plan_action, COMPLETION_ID, GUIDANCE_PREFIX, VIRTUAL_PREFIX};
pub use plan::{
    describe_triple, infer_task_plan, infer_task_plan_with, instruction_text, Anchor, Step, TaskPlan,
    MIN_SEGMENT_FRAMES, SEGMENT_THRESHOLD,
};
pub use progress::{track_progress, ProgressState, StepPointer, TrackerConfig};

use crate::scene_graph::{relation_triples, EdgeCategory, LabelTriple, SceneGraph};

pub type Triple = LabelTriple;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReasoningError {
    #[error("episode {0} has no physical interactions to plan from")]
    UnplannableEpisode(String),
    #[error("invalid scene graph: {0}")]
    InvalidGraph(String),
    #[error("progress state does not match plan: {0}")]
    InconsistentState(String),
    #[error("alignment refused: {steps} steps over {frames} frames exceeds oracle scale")]
    ScaleExceeded { steps: usize, frames: usize },
}

/// Set of Physical label triples of `g`.
pub fn physical_triples(g: &SceneGraph) -> BTreeSet<Triple> {
    relation_triples(g, |c| c == EdgeCategory::Physical)
        .into_iter()
        .collect()
}
