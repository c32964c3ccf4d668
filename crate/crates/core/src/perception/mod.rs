//! Folds egocentric event frames into scene graphs.
//!
//! Detections become Object / UiElement nodes, hand events become Hand nodes,
//! and a single User node is always present. Relations are derived from
//! geometry: grasping from hand pose and distance, next_to from pairwise
//! proximity, looking_at from the gaze cone, and attending_to from a
//! looking_at target that persists across frames.

mod events;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::scene_graph::{validate_graph, Edge, EdgeKind, EntityId, Node, NodeKind, SceneGraph, Violation, USER_ID};

pub use events::{
    parse_event_stream, write_event_stream, DetectionCategory, EgoEvent, EventFrame, EventPayload, Gaze,
    HandObservation, HandPose, HandSide, ParsedStream, SchemaViolation, StreamError, UNIT_NORM_TOLERANCE,
};

/// User-node attribute holding the current looking_at target.
pub const ATTENTION_TARGET_ATTR: &str = "attention_target";
/// User-node attribute counting consecutive frames on that target.
pub const ATTENTION_FRAMES_ATTR: &str = "attention_frames";
/// User-node attribute carrying this frame's speech.
pub const UTTERANCES_ATTR: &str = "utterances";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub min_confidence: f64,
    /// Meters.
    pub grasp_radius: f64,
    /// Meters.
    pub proximity_radius: f64,
    /// Degrees.
    pub gaze_cone_deg: f64,
    pub attention_frames: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.5,
            grasp_radius: 0.15,
            proximity_radius: 0.30,
            gaze_cone_deg: 10.0,
            attention_frames: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("frame t={frame} does not follow previous graph t={prev}")]
    OutOfOrder { prev: u64, frame: u64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("built graph is invalid: {0:?}")]
    Invalid(Vec<Violation>),
}

/// Graph built from one frame plus dropped-event warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceived {
    pub graph: SceneGraph,
    pub warnings: Vec<String>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

/// Angle in degrees between the gaze ray and the direction to `point`, or
/// `None` when the point coincides with the gaze origin.
pub fn gaze_angle_deg(gaze: &Gaze, point: [f64; 3]) -> Option<f64> {
    let v = sub(point, gaze.origin);
    let len = norm(v);
    if len == 0.0 {
        return None;
    }
    let d = gaze.direction;
    let cos = (d[0] * v[0] + d[1] * v[1] + d[2] * v[2]) / (norm(d) * len);
    Some(cos.clamp(-1.0, 1.0).acos().to_degrees())
}

/// The positioned node closest in angle to the gaze ray, inside the cone.
/// Ties go to the nearer node, then the smaller id.
pub fn infer_attention(gaze: &Gaze, objects: &[Node], cfg: &PerceptionConfig) -> Option<EntityId> {
    let mut best: Option<(f64, f64, &EntityId)> = None;
    for n in objects {
        let Some(p) = n.position else { continue };
        let Some(angle) = gaze_angle_deg(gaze, p) else { continue };
        if angle >= cfg.gaze_cone_deg {
            continue;
        }
        let cand = (angle, distance(p, gaze.origin), &n.id);
        let better = match &best {
            None => true,
            Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2))),
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|b| b.2.clone())
}

/// Nearest node within the grasp radius of a grasping hand.
pub fn detect_grasp(hand: &HandObservation, objects: &[Node], cfg: &PerceptionConfig) -> Option<EntityId> {
    if hand.pose != HandPose::Grasp {
        return None;
    }
    let mut best: Option<(f64, &EntityId)> = None;
    for n in objects {
        let Some(p) = n.position else { continue };
        let d = distance(p, hand.position);
        if d >= cfg.grasp_radius {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bd, bid)) => d < *bd || (d == *bd && &n.id < bid),
        };
        if better {
            best = Some((d, &n.id));
        }
    }
    best.map(|b| b.1.clone())
}

fn reserved(id: &EntityId) -> bool {
    matches!(id.as_str(), USER_ID | "left_hand" | "right_hand") || id.as_str().starts_with("action.")
}

/// Builds the scene graph for one frame. `prev` carries the attention
/// persistence counter forward.
pub fn build_scene_graph(
    frame: &EventFrame,
    prev: Option<&SceneGraph>,
    cfg: &PerceptionConfig,
) -> Result<Perceived, PerceptionError> {
    frame.check().map_err(PerceptionError::InvalidFrame)?;
    for e in &frame.events {
        e.check()
            .map_err(|v| PerceptionError::InvalidFrame(format!("t={}: {v}", e.t)))?;
    }
    if let Some(p) = prev {
        if p.t >= frame.t {
            return Err(PerceptionError::OutOfOrder {
                prev: p.t,
                frame: frame.t,
            });
        }
    }

    let mut warnings = Vec::new();
    let mut warn = |w: String| {
        log::warn!("{w}");
        warnings.push(w);
    };

    // Highest-confidence detection per entity; first one wins ties.
    let mut detections: BTreeMap<EntityId, (f64, Node)> = BTreeMap::new();
    let mut gaze = None;
    let mut hands: Vec<&HandObservation> = Vec::new();
    let mut utterances: Vec<&str> = Vec::new();
    let mut actions = Vec::new();
    for e in &frame.events {
        match &e.payload {
            EventPayload::Detection {
                entity_id,
                label,
                category,
                position,
                confidence,
            } => {
                if *confidence < cfg.min_confidence {
                    continue;
                }
                if reserved(entity_id) {
                    warn(format!(
                        "t={}: detection uses reserved id {entity_id}; dropped",
                        frame.t
                    ));
                    continue;
                }
                let kind = match category {
                    DetectionCategory::Object => NodeKind::Object,
                    DetectionCategory::UiElement => NodeKind::UiElement,
                };
                let node = Node::new(entity_id.clone(), kind, label.trim().to_lowercase()).with_position(*position);
                match detections.get(entity_id) {
                    Some((c, _)) if *c >= *confidence => {}
                    _ => {
                        detections.insert(entity_id.clone(), (*confidence, node));
                    }
                }
            }
            EventPayload::Gaze(g) => gaze = Some(g),
            EventPayload::Hand(h) => hands.push(h),
            EventPayload::Speech { text } => utterances.push(text),
            EventPayload::UserAction { .. } => actions.push(&e.payload),
        }
    }

    let objects: Vec<Node> = detections.into_values().map(|(_, n)| n).collect();
    let mut g = SceneGraph::new(frame.t);
    let mut edges: BTreeSet<Edge> = BTreeSet::new();

    let mut user = Node::new(EntityId::user(), NodeKind::User, "user");
    if !utterances.is_empty() {
        user.attributes.insert(UTTERANCES_ATTR.into(), utterances.join("\n"));
    }

    for h in &hands {
        let id = h.side.node_id();
        g.nodes.push(
            Node::new(id.clone(), NodeKind::Hand, "hand")
                .with_position(h.position)
                .with_attribute("side", h.side.as_str())
                .with_attribute("pose", h.pose.as_str()),
        );
        if let Some(target) = detect_grasp(h, &objects, cfg) {
            edges.insert(Edge::new(id, EdgeKind::Grasping, target));
        }
    }

    let physical: Vec<&Node> = objects.iter().filter(|n| n.kind == NodeKind::Object).collect();
    for (i, a) in physical.iter().enumerate() {
        for b in &physical[i + 1..] {
            let (Some(pa), Some(pb)) = (a.position, b.position) else {
                continue;
            };
            if distance(pa, pb) < cfg.proximity_radius {
                let (s, t) = if (&a.label, &a.id) <= (&b.label, &b.id) {
                    (a, b)
                } else {
                    (b, a)
                };
                edges.insert(Edge::new(s.id.clone(), EdgeKind::NextTo, t.id.clone()));
            }
        }
    }

    if let Some(gz) = gaze {
        if let Some(target) = infer_attention(gz, &objects, cfg) {
            let prev_count = prev
                .and_then(|p| p.node_by_str(USER_ID))
                .filter(|u| u.attribute(ATTENTION_TARGET_ATTR) == Some(target.as_str()))
                .and_then(|u| u.attribute(ATTENTION_FRAMES_ATTR))
                .and_then(|c| c.parse::<u32>().ok())
                .unwrap_or(0);
            let count = prev_count + 1;
            user.attributes.insert(ATTENTION_TARGET_ATTR.into(), target.to_string());
            user.attributes.insert(ATTENTION_FRAMES_ATTR.into(), count.to_string());
            edges.insert(Edge::new(EntityId::user(), EdgeKind::LookingAt, target.clone()));
            if count >= cfg.attention_frames {
                edges.insert(Edge::new(EntityId::user(), EdgeKind::AttendingTo, target));
            }
        }
    }

    let mut known: BTreeSet<EntityId> = objects.iter().map(|n| n.id.clone()).collect();
    known.insert(EntityId::user());
    known.extend(hands.iter().map(|h| h.side.node_id()));

    let mut action_index = 0usize;
    for a in actions {
        let EventPayload::UserAction {
            verb,
            subject_id,
            object_id,
            relation,
        } = a
        else {
            continue;
        };
        if !known.contains(subject_id) {
            warn(format!(
                "t={}: user_action {verb:?} references undetected subject {subject_id}; dropped",
                frame.t
            ));
            continue;
        }
        if let Some(o) = object_id {
            if !known.contains(o) {
                warn(format!(
                    "t={}: user_action {verb:?} references undetected object {o}; dropped",
                    frame.t
                ));
                continue;
            }
        }
        let verb = verb.trim().to_lowercase();
        let id = EntityId::new(format!("action.{action_index}")).expect("generated id");
        action_index += 1;
        g.nodes
            .push(Node::new(id.clone(), NodeKind::Action, verb.clone()).with_attribute("verb", verb));
        edges.insert(Edge::new(subject_id.clone(), EdgeKind::Performs, id.clone()));
        if let Some(o) = object_id {
            edges.insert(Edge::new(id, EdgeKind::ActsOn, o.clone()));
            if let Some(kind) = relation.as_deref().and_then(|r| r.parse::<EdgeKind>().ok()) {
                if subject_id != o {
                    edges.insert(Edge::new(subject_id.clone(), kind, o.clone()));
                }
            }
        }
    }

    g.nodes.push(user);
    g.nodes.extend(objects);
    g.edges = edges.into_iter().collect();
    g.canonicalize();

    let violations = validate_graph(&g);
    if !violations.is_empty() {
        return Err(PerceptionError::Invalid(violations));
    }
    Ok(Perceived { graph: g, warnings })
}

/// Folds a whole stream into its graph sequence.
pub fn fold_frames(frames: &[EventFrame], cfg: &PerceptionConfig) -> Result<Vec<SceneGraph>, PerceptionError> {
    let mut out: Vec<SceneGraph> = Vec::with_capacity(frames.len());
    for f in frames {
        let p = build_scene_graph(f, out.last(), cfg)?;
        out.push(p.graph);
    }
    Ok(out)
}
