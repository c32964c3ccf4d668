use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{IngestResult, Session, SessionError, Snapshot};
use crate::config::EngineConfig;
use crate::memory::{EpisodeMeta, MemoryStore, RetrievalQuery};
use crate::perception::{fold_frames, parse_event_stream, EventFrame};
use crate::reasoning::{infer_task_plan, TaskPlan};

pub const DEFAULT_CANDIDATES: usize = 3;

/// Parses, perceives and stores one recording.
pub fn ingest_recording(
    store: &mut MemoryStore,
    bytes: &[u8],
    title: &str,
    location: &str,
    recorded_at: DateTime<Utc>,
    cfg: &EngineConfig,
) -> Result<EpisodeMeta, SessionError> {
    let parsed = parse_event_stream(bytes)?;
    if parsed.frames.is_empty() {
        return Err(SessionError::EmptyRecording);
    }
    let graphs = fold_frames(&parsed.frames, &cfg.perception)?;
    Ok(store.store_episode(&graphs, title, location, recorded_at)?)
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionQuery {
    pub keywords: Vec<String>,
    pub location: Option<String>,
    /// Confirms a previously offered candidate.
    pub episode_id: Option<String>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub id: String,
    pub title: String,
    pub location: String,
    pub recorded_at: DateTime<Utc>,
    pub score: f64,
}

/// Ranked candidates, plus the started session when the choice was clear.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreateOutcome {
    pub candidates: Vec<Candidate>,
    pub session: Option<Snapshot>,
}

/// Owns the store and all live sessions. Each session is mutated under its
/// own lock; the store allows many readers or one writer.
pub struct SessionManager {
    store: RwLock<MemoryStore>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    config: EngineConfig,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new(store: MemoryStore, config: EngineConfig) -> Self {
        Self {
            store: RwLock::new(store),
            sessions: RwLock::new(BTreeMap::new()),
            config,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn list_episodes(&self) -> Vec<EpisodeMeta> {
        self.store.read().expect("store lock").list()
    }

    pub fn ingest_recording(&self, bytes: &[u8], title: &str, location: &str) -> Result<EpisodeMeta, SessionError> {
        let mut store = self.store.write().expect("store lock");
        ingest_recording(&mut store, bytes, title, location, Utc::now(), &self.config)
    }

    pub fn plan(&self, episode_id: &str) -> Result<TaskPlan, SessionError> {
        let ep = self
            .store
            .read()
            .expect("store lock")
            .load_into_working_memory(episode_id)?;
        Ok(infer_task_plan(&ep)?)
    }

    /// Ranks episodes for `query` and starts a session when an episode id
    /// was given or exactly one candidate matches.
    pub fn create_session(&self, query: &SessionQuery) -> Result<CreateOutcome, SessionError> {
        let store = self.store.read().expect("store lock");
        let (candidates, chosen) = if let Some(id) = &query.episode_id {
            let ep = store.load_into_working_memory(id)?;
            let c = Candidate {
                id: ep.meta.id.clone(),
                title: ep.meta.title.clone(),
                location: ep.meta.location.clone(),
                recorded_at: ep.meta.recorded_at,
                score: 1.0,
            };
            (vec![c], Some(ep))
        } else {
            let mut rq = RetrievalQuery::keywords(&query.keywords);
            rq.location = query.location.clone();
            let k = query.k.unwrap_or(DEFAULT_CANDIDATES);
            let ranked = store.retrieve(&rq, k)?;
            let candidates: Vec<Candidate> = ranked
                .into_iter()
                .filter(|s| s.score > 0.0)
                .map(|s| Candidate {
                    id: s.meta.id,
                    title: s.meta.title,
                    location: s.meta.location,
                    recorded_at: s.meta.recorded_at,
                    score: s.score,
                })
                .collect();
            if candidates.is_empty() {
                return Err(SessionError::NoMatchingEpisode);
            }
            let chosen = if candidates.len() == 1 {
                Some(store.load_into_working_memory(&candidates[0].id)?)
            } else {
                None
            };
            (candidates, chosen)
        };
        drop(store);

        let session = match chosen {
            Some(ep) => {
                let id = format!("s-{}", self.next_id.fetch_add(1, Ordering::SeqCst));
                let s = Session::new(id.clone(), &ep, Utc::now())?;
                let snap = s.snapshot();
                self.sessions
                    .write()
                    .expect("sessions lock")
                    .insert(id, Arc::new(Mutex::new(s)));
                Some(snap)
            }
            None => None,
        };
        Ok(CreateOutcome { candidates, session })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn ingest_frames(&self, id: &str, frames: &[EventFrame]) -> Result<IngestResult, SessionError> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session lock");
        Ok(s.ingest_events(frames, &self.config))
    }

    /// Parses an event stream chunk and feeds it to the session.
    pub fn ingest_events(&self, id: &str, bytes: &[u8]) -> Result<IngestResult, SessionError> {
        let s = self.session(id)?;
        let parsed = parse_event_stream(bytes)?;
        let mut s = s.lock().expect("session lock");
        Ok(s.ingest_events(&parsed.frames, &self.config))
    }

    pub fn snapshot(&self, id: &str) -> Result<Snapshot, SessionError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session lock");
        Ok(s.snapshot())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("sessions lock").keys().cloned().collect()
    }
}
