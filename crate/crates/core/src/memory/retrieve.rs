//! Exact scan retrieval over the episode index.

use std::cmp::Ordering;

use super::embed::embed_graph;
use super::store::{EpisodeMeta, IndexEntry, MemoryError};
use crate::scene_graph::SceneGraph;

pub const TITLE_WEIGHT: f64 = 0.6;
pub const CONTEXT_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalQuery {
    pub location: Option<String>,
    pub keywords: Vec<String>,
    pub context: Option<SceneGraph>,
}

impl RetrievalQuery {
    pub fn keywords<S: AsRef<str>>(words: &[S]) -> Self {
        Self {
            keywords: words.iter().map(|w| w.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn at(mut self, location: impl Into<String>) -> Self {
        self.location = Some(location.into());
        self
    }

    pub fn with_context(mut self, g: SceneGraph) -> Self {
        self.context = Some(g);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_none() && self.keywords.is_empty() && self.context.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode {
    pub meta: EpisodeMeta,
    pub score: f64,
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Fraction of keywords that appear as words of the title, ignoring case and
/// surrounding punctuation.
pub fn title_match(title: &str, keywords: &[String]) -> f64 {
    let words: Vec<String> = title.split_whitespace().map(normalize_word).collect();
    let wanted: Vec<String> = keywords
        .iter()
        .map(|k| normalize_word(k))
        .filter(|k| !k.is_empty())
        .collect();
    if wanted.is_empty() {
        return 0.0;
    }
    let hits = wanted.iter().filter(|k| words.contains(k)).count();
    hits as f64 / wanted.len() as f64
}

/// Scores and ranks `entries`, returning at most `k` results.
///
/// Score is `0.6 * title_match + 0.4 * max(0, cosine)`; when only one
/// component is present it carries the full weight, and a location-only query
/// scores every candidate 1.0. Ties go to the more recent episode, then the
/// smaller id.
pub fn rank<'a>(
    entries: impl Iterator<Item = &'a IndexEntry>,
    query: &RetrievalQuery,
    k: usize,
) -> Result<Vec<ScoredEpisode>, MemoryError> {
    if query.is_empty() {
        return Err(MemoryError::EmptyQuery);
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let has_keywords = query.keywords.iter().any(|k| !normalize_word(k).is_empty());
    let context = query.context.as_ref().map(embed_graph);
    let (wt, ws) = match (has_keywords, context.is_some()) {
        (true, true) => (TITLE_WEIGHT, CONTEXT_WEIGHT),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (0.0, 0.0),
    };
    let mut scored: Vec<ScoredEpisode> = entries
        .filter(|e| query.location.as_ref().is_none_or(|l| &e.meta.location == l))
        .map(|e| {
            let score = if wt == 0.0 && ws == 0.0 {
                1.0
            } else {
                let t = if has_keywords {
                    title_match(&e.meta.title, &query.keywords)
                } else {
                    0.0
                };
                let s = context.as_ref().map(|c| c.cosine(&e.embedding).max(0.0)).unwrap_or(0.0);
                wt * t + ws * s
            };
            ScoredEpisode {
                meta: e.meta.clone(),
                score,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.meta.recorded_at.cmp(&a.meta.recorded_at))
            .then_with(|| a.meta.id.cmp(&b.meta.id))
    });
    scored.truncate(k);
    Ok(scored)
}
