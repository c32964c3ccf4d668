//! Synthetic task scenarios with ground truth and seeded noise.

mod eval;
mod generate;
mod noise;

pub use eval::{
    builtin_suite, builtin_suite_names, evaluate_run, parse_suite, RunMetrics, SuiteEntry, TraceFrame,
    BOUNDARY_TOLERANCE,
};
pub use generate::{
    generate_scenario, template_names, EntitySpec, Generated, GroundTruth, GroundTruthStep, Scenario, ScriptAction,
    ScriptStep, DEFAULT_FRAME_RATE,
};
pub use noise::{builtin_profiles, parse_profiles, perturb_stream, Interruption, NoiseProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown template {name:?}; available: {available}")]
    UnknownTemplate { name: String, available: String },
    #[error("unknown noise profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
    #[error("suite line {line}: {message}")]
    InvalidSuite { line: usize, message: String },
    #[error("trace has {found} frames, ground truth has {expected}")]
    LengthMismatch { expected: usize, found: usize },
}
