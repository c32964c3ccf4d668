//! Episodic scene-graph memory with live progress tracking and guidance.
//!
//! Recording turns an egocentric event stream into a sequence of scene
//! graphs stored as a titled episode. Recall retrieves an episode, infers the
//! user's step plan from it, tracks a live stream against that plan, and
//! emits highlight / tip / voice commands.

pub mod actuator;
pub mod config;
pub mod harness;
pub mod memory;
pub mod perception;
pub mod reasoning;
pub mod scene_graph;
pub mod session;
