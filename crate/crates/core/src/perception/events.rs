//! Line-delimited egocentric event records.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scene_graph::{EdgeCategory, EdgeKind, EntityId};

/// Allowed deviation of a gaze direction from unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionCategory {
    Object,
    UiElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub fn as_str(self) -> &'static str {
        match self {
            HandSide::Left => "left",
            HandSide::Right => "right",
        }
    }

    /// Node id used for this hand in scene graphs.
    pub fn node_id(self) -> EntityId {
        EntityId::new(format!("{}_hand", self.as_str())).expect("static id")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandPose {
    Open,
    Pinch,
    Grasp,
}

impl HandPose {
    pub fn as_str(self) -> &'static str {
        match self {
            HandPose::Open => "open",
            HandPose::Pinch => "pinch",
            HandPose::Grasp => "grasp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaze {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    pub side: HandSide,
    pub position: [f64; 3],
    pub pose: HandPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Detection {
        entity_id: EntityId,
        label: String,
        category: DetectionCategory,
        position: [f64; 3],
        confidence: f64,
    },
    Gaze(Gaze),
    Hand(HandObservation),
    Speech {
        text: String,
    },
    UserAction {
        verb: String,
        subject_id: EntityId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object_id: Option<EntityId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relation: Option<String>,
    },
}

impl EventPayload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventPayload::Detection { .. } => "detection",
            EventPayload::Gaze(_) => "gaze",
            EventPayload::Hand(_) => "hand",
            EventPayload::Speech { .. } => "speech",
            EventPayload::UserAction { .. } => "user_action",
        }
    }

    fn known_fields(kind: &str) -> Option<&'static [&'static str]> {
        Some(match kind {
            "detection" => &["entity_id", "label", "category", "position", "confidence"],
            "gaze" => &["origin", "direction"],
            "hand" => &["side", "position", "pose"],
            "speech" => &["text"],
            "user_action" => &["verb", "subject_id", "object_id", "relation"],
            _ => return None,
        })
    }
}

/// One structured egocentric observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoEvent {
    pub t: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl EgoEvent {
    pub fn new(t: u64, payload: EventPayload) -> Self {
        Self { t, payload }
    }

    /// Single JSON line, no trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }

    /// Checks value-level invariants the type system does not carry.
    pub fn check(&self) -> Result<(), SchemaViolation> {
        let bad = |field: &str, message: String| {
            Err(SchemaViolation {
                field: field.to_string(),
                message,
            })
        };
        let finite = |p: &[f64; 3]| p.iter().all(|x| x.is_finite());
        match &self.payload {
            EventPayload::Detection {
                label,
                position,
                confidence,
                ..
            } => {
                if label.trim().is_empty() {
                    return bad("label", "must be non-empty".into());
                }
                if !finite(position) {
                    return bad("position", "must be finite".into());
                }
                if !(0.0..=1.0).contains(confidence) {
                    return bad("confidence", format!("{confidence} outside [0, 1]"));
                }
            }
            EventPayload::Gaze(g) => {
                if !finite(&g.origin) {
                    return bad("origin", "must be finite".into());
                }
                let norm = g.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return bad("direction", format!("norm {norm} is not 1 within 1e-6"));
                }
            }
            EventPayload::Hand(h) => {
                if !finite(&h.position) {
                    return bad("position", "must be finite".into());
                }
            }
            EventPayload::Speech { .. } => {}
            EventPayload::UserAction { verb, relation, .. } => {
                if verb.trim().is_empty() {
                    return bad("verb", "must be non-empty".into());
                }
                if let Some(r) = relation {
                    match r.parse::<EdgeKind>() {
                        Ok(k) if k.category() == EdgeCategory::Physical => {}
                        _ => return bad("relation", format!("{r:?} is not a physical relation")),
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

/// All events sharing one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub t: u64,
    pub events: Vec<EgoEvent>,
}

impl EventFrame {
    pub fn new(t: u64) -> Self {
        Self { t, events: Vec::new() }
    }

    pub fn push(&mut self, payload: EventPayload) {
        self.events.push(EgoEvent::new(self.t, payload));
    }

    /// Frame-level invariants: matching t, one gaze, one hand per side.
    pub fn check(&self) -> Result<(), String> {
        let mut gaze = 0;
        let mut sides = BTreeSet::new();
        for e in &self.events {
            if e.t != self.t {
                return Err(format!("event with t={} inside frame t={}", e.t, self.t));
            }
            match &e.payload {
                EventPayload::Gaze(_) => {
                    gaze += 1;
                    if gaze > 1 {
                        return Err(format!("frame t={} has more than one gaze event", self.t));
                    }
                }
                EventPayload::Hand(h) if !sides.insert(h.side) => {
                    return Err(format!(
                        "frame t={} has more than one {} hand event",
                        self.t,
                        h.side.as_str()
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StreamError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {violation}")]
    Schema { line: usize, violation: SchemaViolation },
    #[error("{0}")]
    Frame(String),
}

/// Parsed stream plus non-fatal findings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedStream {
    pub frames: Vec<EventFrame>,
    pub warnings: Vec<String>,
}

fn parse_line(line_no: usize, text: &str, warnings: &mut Vec<String>) -> Result<EgoEvent, StreamError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| StreamError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object_mut().ok_or_else(|| StreamError::Malformed {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    let schema = |field: &str, message: String| StreamError::Schema {
        line: line_no,
        violation: SchemaViolation {
            field: field.into(),
            message,
        },
    };
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("kind", "missing or not a string".into()))?
        .to_string();
    let known =
        EventPayload::known_fields(&kind).ok_or_else(|| schema("kind", format!("unknown event kind {kind:?}")))?;
    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| *k != "t" && *k != "kind" && !known.contains(&k.as_str()))
        .cloned()
        .collect();
    for k in unknown {
        let w = format!("line {line_no}: ignoring unknown field `{k}`");
        log::warn!("{w}");
        warnings.push(w);
        obj.remove(&k);
    }
    if !obj.get("t").is_some_and(Value::is_u64) {
        return Err(schema("t", "missing or not a non-negative integer".into()));
    }
    let event: EgoEvent = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|f| known.contains(f))
            .unwrap_or(kind.as_str())
            .to_string();
        schema(&field, msg)
    })?;
    event.check().map_err(|violation| StreamError::Schema {
        line: line_no,
        violation,
    })?;
    Ok(event)
}

/// Parses a JSONL event stream into frames sorted by timestep.
///
/// Blank lines are skipped. Out-of-order timesteps are accepted and re-sorted
/// (stable within a timestep) with a warning.
pub fn parse_event_stream(bytes: &[u8]) -> Result<ParsedStream, StreamError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        StreamError::Malformed {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    let mut warnings = Vec::new();
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        events.push(parse_line(i + 1, raw, &mut warnings)?);
    }
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        let w = "non-monotone timesteps; events re-sorted".to_string();
        log::warn!("{w}");
        warnings.push(w);
        events.sort_by_key(|e| e.t);
    }
    let mut frames: Vec<EventFrame> = Vec::new();
    for e in events {
        match frames.last_mut() {
            Some(f) if f.t == e.t => f.events.push(e),
            _ => frames.push(EventFrame {
                t: e.t,
                events: vec![e],
            }),
        }
    }
    for f in &frames {
        f.check().map_err(StreamError::Frame)?;
    }
    Ok(ParsedStream { frames, warnings })
}

/// Serializes frames back into the JSONL format.
pub fn write_event_stream(frames: &[EventFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        for e in &f.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
    }
    out
}
