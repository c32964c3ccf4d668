//! Episodic memory: titled scene-graph recordings, deterministic
//! embeddings, and exact retrieval.

mod embed;
mod retrieve;
mod store;

pub use embed::{embed_episode, embed_graph, extract_keyframes, EmbeddingVector, D_EMB};
pub use retrieve::{rank, title_match, RetrievalQuery, ScoredEpisode, CONTEXT_WEIGHT, TITLE_WEIGHT};
pub use store::{Episode, EpisodeMeta, Fault, IndexEntry, MemoryError, MemoryStore, KEYFRAME_THRESHOLD};
