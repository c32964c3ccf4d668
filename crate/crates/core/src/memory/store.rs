//! Persistent episode store.
//!
//! Layout under the root directory:
//!
//! ```text
//! episodes/<id>.sgseq   header line (episode meta as JSON), then one canonical graph per line
//! index.tsv             id, title, recorded_at, location, duration, 256 embedding values
//! ```
//!
//! Every file is written to a `.tmp` sibling and renamed into place. The
//! index is derived data and can always be rebuilt from the episode files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::{embed_episode, extract_keyframes, EmbeddingVector, D_EMB};
use super::retrieve::{rank, RetrievalQuery, ScoredEpisode};
use crate::scene_graph::{canonical_decode, canonical_encode, validate_graph, SceneGraph};

/// Physical-change threshold for keyframes.
pub const KEYFRAME_THRESHOLD: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub id: String,
    pub title: String,
    pub recorded_at: DateTime<Utc>,
    pub location: String,
    /// Number of timesteps (graphs).
    pub duration: usize,
}

/// A recalled episode, ready for the reasoning module.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub graphs: Vec<SceneGraph>,
    pub keyframes: Vec<usize>,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("integrity error in {file}: {message}")]
    Integrity { file: String, message: String },
    #[error("episode {0} not found")]
    NotFound(String),
    #[error("episode id {0} already exists")]
    DuplicateId(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("query must set at least one of location, keywords, context")]
    EmptyQuery,
    #[error("injected fault: {0:?}")]
    InjectedFault(Fault),
}

/// Crash points for fault-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Stop after the episode temp file is written, before it is renamed.
    BeforeEpisodeRename,
    /// Stop after the index temp file is written, before it is renamed.
    BeforeIndexRename,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    duration: usize,
    id: String,
    keyframes: Vec<usize>,
    location: String,
    recorded_at: String,
    sha256: String,
    title: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn check_text_field(name: &str, value: &str, allow_empty: bool) -> Result<(), MemoryError> {
    if !allow_empty && value.trim().is_empty() {
        return Err(MemoryError::InvalidEpisode(format!("{name} must be non-empty")));
    }
    if value.chars().any(|c| c == '\t' || c == '\n' || c == '\r') {
        return Err(MemoryError::InvalidEpisode(format!(
            "{name} must not contain tabs or line breaks"
        )));
    }
    Ok(())
}

/// Serialized sequence file for an episode.
fn encode_episode(meta: &EpisodeMeta, graphs: &[SceneGraph], keyframes: &[usize]) -> Result<Vec<u8>, MemoryError> {
    let mut body = Vec::new();
    for g in graphs {
        body.extend(canonical_encode(g).map_err(|e| MemoryError::InvalidEpisode(e.to_string()))?);
        body.push(b'\n');
    }
    let header = Header {
        duration: meta.duration,
        id: meta.id.clone(),
        keyframes: keyframes.to_vec(),
        location: meta.location.clone(),
        recorded_at: format_time(&meta.recorded_at),
        sha256: hex::encode(Sha256::digest(&body)),
        title: meta.title.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(body);
    Ok(out)
}

fn decode_episode(file: &str, bytes: &[u8]) -> Result<Episode, MemoryError> {
    let integrity = |message: String| MemoryError::Integrity {
        file: file.to_string(),
        message,
    };
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| integrity("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| integrity(format!("line 1: bad header: {e}")))?;
    let body = &bytes[split + 1..];
    let digest = hex::encode(Sha256::digest(body));
    if digest != header.sha256 {
        return Err(integrity(format!(
            "checksum mismatch (header {}, content {digest})",
            header.sha256
        )));
    }
    let recorded_at = DateTime::parse_from_rfc3339(&header.recorded_at)
        .map_err(|e| integrity(format!("bad recorded_at: {e}")))?
        .with_timezone(&Utc);

    let mut graphs: Vec<SceneGraph> = Vec::new();
    for (i, line) in body.split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let d = canonical_decode(line).map_err(|e| integrity(format!("line {}: {e}", i + 2)))?;
        if let Some(prev) = graphs.last() {
            if d.graph.t <= prev.t {
                return Err(integrity(format!("line {}: timesteps not increasing", i + 2)));
            }
        }
        graphs.push(d.graph);
    }
    if graphs.is_empty() {
        return Err(integrity("episode has no graphs".into()));
    }
    if graphs.len() != header.duration {
        return Err(integrity(format!(
            "duration {} does not match {} graphs",
            header.duration,
            graphs.len()
        )));
    }
    if header.keyframes.windows(2).any(|w| w[0] >= w[1]) || header.keyframes.iter().any(|&k| k >= graphs.len()) {
        return Err(integrity("keyframes out of range or unsorted".into()));
    }
    let embedding = embed_episode(&graphs, &header.keyframes);
    Ok(Episode {
        meta: EpisodeMeta {
            id: header.id,
            title: header.title,
            recorded_at,
            location: header.location,
            duration: header.duration,
        },
        graphs,
        keyframes: header.keyframes,
        embedding,
    })
}

/// Deterministic id derived from metadata and content.
fn episode_id(title: &str, location: &str, recorded_at: &DateTime<Utc>, body: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(title.as_bytes());
    h.update([0]);
    h.update(location.as_bytes());
    h.update([0]);
    h.update(format_time(recorded_at).as_bytes());
    h.update([0]);
    h.update(body);
    format!("ep-{}", &hex::encode(h.finalize())[..16])
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub meta: EpisodeMeta,
    pub embedding: EmbeddingVector,
}

#[derive(Debug)]
enum Backend {
    Dir(PathBuf),
    Memory(BTreeMap<String, Vec<u8>>),
}

/// Episode store with an exact in-memory index.
///
/// Mutation goes through `&mut self`; callers that share a store across
/// threads wrap it in a reader/writer lock.
#[derive(Debug)]
pub struct MemoryStore {
    backend: Backend,
    entries: BTreeMap<String, IndexEntry>,
    fault: Option<Fault>,
}

impl MemoryStore {
    /// Store that keeps episode files in memory only.
    pub fn in_memory() -> Self {
        Self {
            backend: Backend::Memory(BTreeMap::new()),
            entries: BTreeMap::new(),
            fault: None,
        }
    }

    /// Opens (creating if needed) a directory-backed store. A missing index
    /// is rebuilt from the episode files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        let episodes = root.join("episodes");
        fs::create_dir_all(&episodes).map_err(io_err(&episodes))?;
        let index_path = root.join("index.tsv");
        let mut store = Self {
            backend: Backend::Dir(root),
            entries: BTreeMap::new(),
            fault: None,
        };
        if index_path.exists() {
            let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
            store.entries = parse_index(&text)?;
            for id in store.entries.keys() {
                let p = episodes.join(format!("{id}.sgseq"));
                if !p.exists() {
                    return Err(MemoryError::Integrity {
                        file: p.display().to_string(),
                        message: "listed in index.tsv but missing".into(),
                    });
                }
            }
        } else {
            store.entries = store.scan_episodes()?;
            store.flush_index()?;
        }
        Ok(store)
    }

    /// Arms (or clears) a crash point for the next write.
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn root(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Dir(p) => Some(p),
            Backend::Memory(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    pub fn list(&self) -> Vec<EpisodeMeta> {
        self.entries.values().map(|e| e.meta.clone()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    fn scan_episodes(&self) -> Result<BTreeMap<String, IndexEntry>, MemoryError> {
        let mut out = BTreeMap::new();
        match &self.backend {
            Backend::Memory(files) => {
                for (id, bytes) in files {
                    let ep = decode_episode(id, bytes)?;
                    out.insert(
                        ep.meta.id.clone(),
                        IndexEntry {
                            meta: ep.meta,
                            embedding: ep.embedding,
                        },
                    );
                }
            }
            Backend::Dir(root) => {
                let dir = root.join("episodes");
                let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                    .map_err(io_err(&dir))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "sgseq"))
                    .collect();
                paths.sort();
                for p in paths {
                    let bytes = fs::read(&p).map_err(io_err(&p))?;
                    let ep = decode_episode(&p.display().to_string(), &bytes)?;
                    out.insert(
                        ep.meta.id.clone(),
                        IndexEntry {
                            meta: ep.meta,
                            embedding: ep.embedding,
                        },
                    );
                }
            }
        }
        Ok(out)
    }

    /// Recomputes the index from episode files alone.
    pub fn rebuild_index(&mut self) -> Result<(), MemoryError> {
        self.entries = self.scan_episodes()?;
        self.flush_index()
    }

    /// Current index in its on-disk text form.
    pub fn index_text(&self) -> String {
        render_index(&self.entries)
    }

    fn flush_index(&mut self) -> Result<(), MemoryError> {
        let Backend::Dir(root) = &self.backend else {
            return Ok(());
        };
        let path = root.join("index.tsv");
        let tmp = root.join("index.tsv.tmp");
        fs::write(&tmp, render_index(&self.entries)).map_err(io_err(&tmp))?;
        if self.fault == Some(Fault::BeforeIndexRename) {
            return Err(MemoryError::InjectedFault(Fault::BeforeIndexRename));
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Persists a titled recording and adds it to the index.
    pub fn store_episode(
        &mut self,
        graphs: &[SceneGraph],
        title: &str,
        location: &str,
        recorded_at: DateTime<Utc>,
    ) -> Result<EpisodeMeta, MemoryError> {
        check_text_field("title", title, false)?;
        check_text_field("location", location, true)?;
        if graphs.is_empty() {
            return Err(MemoryError::InvalidEpisode("episode has no graphs".into()));
        }
        for (i, g) in graphs.iter().enumerate() {
            let v = validate_graph(g);
            if !v.is_empty() {
                return Err(MemoryError::InvalidEpisode(format!("graph {i}: {}", v[0])));
            }
            if i > 0 && g.t <= graphs[i - 1].t {
                return Err(MemoryError::InvalidEpisode(format!(
                    "graph {i}: timesteps must strictly increase"
                )));
            }
        }
        let keyframes =
            extract_keyframes(graphs, KEYFRAME_THRESHOLD).map_err(|e| MemoryError::InvalidEpisode(e.to_string()))?;
        let mut body = Vec::new();
        for g in graphs {
            body.extend(canonical_encode(g).map_err(|e| MemoryError::InvalidEpisode(e.to_string()))?);
            body.push(b'\n');
        }
        let meta = EpisodeMeta {
            id: episode_id(title, location, &recorded_at, &body),
            title: title.to_string(),
            recorded_at,
            location: location.to_string(),
            duration: graphs.len(),
        };
        if self.entries.contains_key(&meta.id) {
            return Err(MemoryError::DuplicateId(meta.id));
        }
        let bytes = encode_episode(&meta, graphs, &keyframes)?;
        let embedding = embed_episode(graphs, &keyframes);

        match &mut self.backend {
            Backend::Memory(files) => {
                files.insert(meta.id.clone(), bytes);
            }
            Backend::Dir(root) => {
                let dir = root.join("episodes");
                let path = dir.join(format!("{}.sgseq", meta.id));
                let tmp = dir.join(format!("{}.sgseq.tmp", meta.id));
                fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
                if self.fault == Some(Fault::BeforeEpisodeRename) {
                    return Err(MemoryError::InjectedFault(Fault::BeforeEpisodeRename));
                }
                fs::rename(&tmp, &path).map_err(io_err(&path))?;
            }
        }
        self.entries.insert(
            meta.id.clone(),
            IndexEntry {
                meta: meta.clone(),
                embedding,
            },
        );
        if let Err(e) = self.flush_index() {
            self.entries.remove(&meta.id);
            if let Backend::Dir(root) = &self.backend {
                let _ = fs::remove_file(root.join("episodes").join(format!("{}.sgseq", meta.id)));
            }
            return Err(e);
        }
        Ok(meta)
    }

    /// Materializes and validates an episode for recall.
    pub fn load_into_working_memory(&self, id: &str) -> Result<Episode, MemoryError> {
        if !self.entries.contains_key(id) {
            return Err(MemoryError::NotFound(id.to_string()));
        }
        let (file, bytes) = match &self.backend {
            Backend::Memory(files) => (
                id.to_string(),
                files
                    .get(id)
                    .cloned()
                    .ok_or_else(|| MemoryError::NotFound(id.to_string()))?,
            ),
            Backend::Dir(root) => {
                let p = root.join("episodes").join(format!("{id}.sgseq"));
                let bytes = fs::read(&p).map_err(|e| MemoryError::Integrity {
                    file: p.display().to_string(),
                    message: e.to_string(),
                })?;
                (p.display().to_string(), bytes)
            }
        };
        let ep = decode_episode(&file, &bytes)?;
        if ep.meta.id != id {
            return Err(MemoryError::Integrity {
                file,
                message: format!("header id {} does not match {id}", ep.meta.id),
            });
        }
        Ok(ep)
    }

    /// Ranked candidates for a recall query; see [`super::retrieve`].
    pub fn retrieve(&self, query: &RetrievalQuery, k: usize) -> Result<Vec<ScoredEpisode>, MemoryError> {
        rank(self.entries.values(), query, k)
    }

    #[cfg(test)]
    pub(crate) fn raw_file_mut(&mut self, id: &str) -> Option<&mut Vec<u8>> {
        match &mut self.backend {
            Backend::Memory(files) => files.get_mut(id),
            Backend::Dir(_) => None,
        }
    }
}

fn json_f64(x: f64) -> String {
    serde_json::to_string(&x).expect("finite")
}

fn render_index(entries: &BTreeMap<String, IndexEntry>) -> String {
    let mut out = String::new();
    for e in entries.values() {
        let m = &e.meta;
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t",
            m.id,
            m.title,
            format_time(&m.recorded_at),
            m.location,
            m.duration
        );
        let values: Vec<String> = e.embedding.values().iter().map(|&x| json_f64(x)).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

fn parse_index(text: &str) -> Result<BTreeMap<String, IndexEntry>, MemoryError> {
    let bad = |line: usize, message: String| MemoryError::Integrity {
        file: "index.tsv".into(),
        message: format!("line {line}: {message}"),
    };
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 columns, found {}", cols.len())));
        }
        let recorded_at = DateTime::parse_from_rfc3339(cols[2])
            .map_err(|e| bad(i + 1, e.to_string()))?
            .with_timezone(&Utc);
        let duration = cols[4].parse().map_err(|_| bad(i + 1, "bad duration".into()))?;
        let values = cols[5]
            .split(' ')
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(i + 1, e.to_string()))?;
        if values.len() != D_EMB {
            return Err(bad(i + 1, format!("expected {D_EMB} embedding values")));
        }
        let embedding = EmbeddingVector::from_values(values).map_err(|e| bad(i + 1, e))?;
        let meta = EpisodeMeta {
            id: cols[0].to_string(),
            title: cols[1].to_string(),
            recorded_at,
            location: cols[3].to_string(),
            duration,
        };
        out.insert(meta.id.clone(), IndexEntry { meta, embedding });
    }
    Ok(out)
}
