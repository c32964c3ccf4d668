//! Dynamic scene graph: the shared representation every other module reads
//! and writes.
//!
//! A [`SceneGraph`] is a plain value. Nodes and edges are kept in vectors so
//! that malformed graphs (duplicate ids, dangling edges) can be represented
//! and reported by [`validate_graph`] instead of being silently collapsed.
//! Graph equality is set equality: insertion order never matters.

mod codec;
mod diff;
mod features;
mod similarity;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use codec::{canonical_decode, canonical_encode, CodecError, Decoded};
pub use diff::{apply_diff, diff_graphs, DiffError, GraphDiff};
pub use features::{feature_cosine, fnv1a64, node_features, D_NODE};
pub use similarity::{graph_similarity, relation_triples, LabelTriple};

/// Maximum length of an [`EntityId`].
pub const MAX_ID_LEN: usize = 64;

/// Id of the singleton user node produced by perception.
pub const USER_ID: &str = "user";

/// Stable identity of a node across timesteps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid entity id {0:?}: expected 1-64 characters from [A-Za-z0-9_.-]")]
pub struct InvalidEntityId(pub String);

impl EntityId {
    pub fn new(value: impl Into<String>) -> Result<Self, InvalidEntityId> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.len() <= MAX_ID_LEN
            && value
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
        if ok {
            Ok(Self(value))
        } else {
            Err(InvalidEntityId(value))
        }
    }

    /// The user node id.
    pub fn user() -> Self {
        Self(USER_ID.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityId {
    type Error = InvalidEntityId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> Self {
        id.0
    }
}

impl FromStr for EntityId {
    type Err = InvalidEntityId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Object,
    Hand,
    Action,
    UiElement,
    User,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Object,
        NodeKind::Hand,
        NodeKind::Action,
        NodeKind::UiElement,
        NodeKind::User,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Object => "object",
            NodeKind::Hand => "hand",
            NodeKind::Action => "action",
            NodeKind::UiElement => "ui_element",
            NodeKind::User => "user",
        }
    }

    pub(crate) fn ordinal(self) -> usize {
        self as usize
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown node kind {s:?}"))
    }
}

/// Relation category; every [`EdgeKind`] belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCategory {
    Physical,
    Attentional,
    Guidance,
}

impl EdgeCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeCategory::Physical => "physical",
            EdgeCategory::Attentional => "attentional",
            EdgeCategory::Guidance => "guidance",
        }
    }
}

impl FromStr for EdgeCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "physical" => Ok(EdgeCategory::Physical),
            "attentional" => Ok(EdgeCategory::Attentional),
            "guidance" => Ok(EdgeCategory::Guidance),
            _ => Err(format!("unknown edge category {s:?}")),
        }
    }
}

/// Closed set of relation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Grasping,
    NextTo,
    Holds,
    Performs,
    ActsOn,
    RelatesTo,
    LookingAt,
    AttendingTo,
    Find,
    Notify,
    ToBeGrasped,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 11] = [
        EdgeKind::Grasping,
        EdgeKind::NextTo,
        EdgeKind::Holds,
        EdgeKind::Performs,
        EdgeKind::ActsOn,
        EdgeKind::RelatesTo,
        EdgeKind::LookingAt,
        EdgeKind::AttendingTo,
        EdgeKind::Find,
        EdgeKind::Notify,
        EdgeKind::ToBeGrasped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Grasping => "grasping",
            EdgeKind::NextTo => "next_to",
            EdgeKind::Holds => "holds",
            EdgeKind::Performs => "performs",
            EdgeKind::ActsOn => "acts_on",
            EdgeKind::RelatesTo => "relates_to",
            EdgeKind::LookingAt => "looking_at",
            EdgeKind::AttendingTo => "attending_to",
            EdgeKind::Find => "find",
            EdgeKind::Notify => "notify",
            EdgeKind::ToBeGrasped => "to_be_grasped",
        }
    }

    /// The only category this kind may carry.
    pub fn category(self) -> EdgeCategory {
        match self {
            EdgeKind::Grasping
            | EdgeKind::NextTo
            | EdgeKind::Holds
            | EdgeKind::Performs
            | EdgeKind::ActsOn
            | EdgeKind::RelatesTo => EdgeCategory::Physical,
            EdgeKind::LookingAt | EdgeKind::AttendingTo => EdgeCategory::Attentional,
            EdgeKind::Find | EdgeKind::Notify | EdgeKind::ToBeGrasped => EdgeCategory::Guidance,
        }
    }
}

impl FromStr for EdgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EdgeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown edge kind {s:?}"))
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: EntityId,
    pub kind: NodeKind,
    pub label: String,
    pub position: Option<[f64; 3]>,
    pub features: Vec<f64>,
    pub attributes: BTreeMap<String, String>,
}

impl Node {
    /// Builds a node and derives its feature vector.
    pub fn new(id: EntityId, kind: NodeKind, label: impl Into<String>) -> Self {
        let label = label.into();
        let features = node_features(&label, kind, None);
        Self {
            id,
            kind,
            label,
            position: None,
            features,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_position(mut self, position: [f64; 3]) -> Self {
        self.position = Some(position);
        self.refresh_features();
        self
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    /// Placeholder nodes created for entities that were not observed.
    pub fn is_virtual(&self) -> bool {
        self.attribute("virtual") == Some("true")
    }

    pub fn refresh_features(&mut self) {
        self.features = node_features(&self.label, self.kind, self.position);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub source: EntityId,
    pub target: EntityId,
    pub kind: EdgeKind,
    pub category: EdgeCategory,
}

impl Edge {
    /// Edge with the category implied by `kind`.
    pub fn new(source: EntityId, kind: EdgeKind, target: EntityId) -> Self {
        Self {
            source,
            target,
            category: kind.category(),
            kind,
        }
    }

    /// Identity of an edge inside a graph.
    pub fn key(&self) -> (&EntityId, EdgeKind, &EntityId) {
        (&self.source, self.kind, &self.target)
    }
}

/// One timestep of the user's surroundings.
#[derive(Debug, Clone, Default)]
pub struct SceneGraph {
    pub t: u64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn new(t: u64) -> Self {
        Self {
            t,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn with_node(mut self, node: Node) -> Self {
        self.nodes.push(node);
        self
    }

    pub fn with_edge(mut self, source: &str, kind: EdgeKind, target: &str) -> Self {
        self.edges.push(Edge::new(
            EntityId::new(source).expect("valid source id"),
            kind,
            EntityId::new(target).expect("valid target id"),
        ));
        self
    }

    pub fn node(&self, id: &EntityId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn node_by_str(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id.as_str() == id)
    }

    pub fn contains_node(&self, id: &EntityId) -> bool {
        self.node(id).is_some()
    }

    pub fn has_edge(&self, source: &str, kind: EdgeKind, target: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.kind == kind && e.source.as_str() == source && e.target.as_str() == target)
    }

    pub fn edges_in(&self, category: EdgeCategory) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.category == category)
    }

    /// Sorts nodes by id and edges by (source, kind, target).
    pub fn canonicalize(&mut self) {
        self.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        self.edges.sort_by(|a, b| {
            (&a.source, a.kind.as_str(), &a.target, a.category).cmp(&(
                &b.source,
                b.kind.as_str(),
                &b.target,
                b.category,
            ))
        });
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    /// True when every node and edge of `self` appears unchanged in `other`.
    pub fn is_subgraph_of(&self, other: &SceneGraph) -> bool {
        self.nodes.iter().all(|n| other.node(&n.id).is_some_and(|m| m == n))
            && self.edges.iter().all(|e| other.edges.contains(e))
    }

    pub fn is_valid(&self) -> bool {
        validate_graph(self).is_empty()
    }
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        if self.t != other.t || self.nodes.len() != other.nodes.len() || self.edges.len() != other.edges.len() {
            return false;
        }
        let a = self.clone().canonicalized();
        let b = other.clone().canonicalized();
        a.nodes == b.nodes && a.edges == b.edges
    }
}

/// One broken invariant found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    DuplicateNodeId {
        id: String,
    },
    InvalidLabel {
        id: String,
        label: String,
    },
    FeatureDimension {
        id: String,
        len: usize,
    },
    NonFiniteFeature {
        id: String,
    },
    NonFinitePosition {
        id: String,
    },
    MissingAttribute {
        id: String,
        key: String,
    },
    InvalidAttribute {
        id: String,
        key: String,
        value: String,
    },
    DanglingEndpoint {
        edge: String,
        missing: String,
    },
    SelfLoop {
        edge: String,
    },
    CategoryMismatch {
        edge: String,
        expected: EdgeCategory,
        found: EdgeCategory,
    },
    DuplicateEdge {
        edge: String,
    },
}

impl Violation {
    fn sort_key(&self) -> (u8, &str) {
        match self {
            Violation::DuplicateNodeId { id }
            | Violation::InvalidLabel { id, .. }
            | Violation::FeatureDimension { id, .. }
            | Violation::NonFiniteFeature { id }
            | Violation::NonFinitePosition { id }
            | Violation::MissingAttribute { id, .. }
            | Violation::InvalidAttribute { id, .. } => (0, id),
            Violation::DanglingEndpoint { edge, .. }
            | Violation::SelfLoop { edge }
            | Violation::CategoryMismatch { edge, .. }
            | Violation::DuplicateEdge { edge } => (1, edge),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId { id } => write!(f, "duplicate node id {id}"),
            Violation::InvalidLabel { id, label } => {
                write!(f, "node {id}: label {label:?} must be non-empty lowercase")
            }
            Violation::FeatureDimension { id, len } => {
                write!(f, "node {id}: feature vector has {len} entries, expected {D_NODE}")
            }
            Violation::NonFiniteFeature { id } => write!(f, "node {id}: non-finite feature"),
            Violation::NonFinitePosition { id } => write!(f, "node {id}: non-finite position"),
            Violation::MissingAttribute { id, key } => {
                write!(f, "node {id}: missing attribute {key}")
            }
            Violation::InvalidAttribute { id, key, value } => {
                write!(f, "node {id}: attribute {key}={value:?} not allowed")
            }
            Violation::DanglingEndpoint { edge, missing } => {
                write!(f, "edge {edge}: endpoint {missing} does not exist")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: source equals target"),
            Violation::CategoryMismatch { edge, expected, found } => write!(
                f,
                "edge {edge}: category {} does not match kind (expected {})",
                found.as_str(),
                expected.as_str()
            ),
            Violation::DuplicateEdge { edge } => write!(f, "edge {edge} appears more than once"),
        }
    }
}

fn edge_label(e: &Edge) -> String {
    format!("{}-{}->{}", e.source, e.kind, e.target)
}

fn label_ok(label: &str) -> bool {
    !label.is_empty() && !label.chars().any(|c| c.is_uppercase() || c.is_control())
}

/// Lists every invariant violation of `g`; empty means valid.
///
/// Node violations come first (sorted by node id), then edge violations
/// (sorted by source, kind, target).
pub fn validate_graph(g: &SceneGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: BTreeSet<&EntityId> = BTreeSet::new();
    let mut dup_reported: BTreeSet<&EntityId> = BTreeSet::new();

    for n in &g.nodes {
        let id = n.id.as_str().to_string();
        if !seen.insert(&n.id) && dup_reported.insert(&n.id) {
            out.push(Violation::DuplicateNodeId { id: id.clone() });
        }
        if !label_ok(&n.label) {
            out.push(Violation::InvalidLabel {
                id: id.clone(),
                label: n.label.clone(),
            });
        }
        if n.features.len() != D_NODE {
            out.push(Violation::FeatureDimension {
                id: id.clone(),
                len: n.features.len(),
            });
        }
        if n.features.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteFeature { id: id.clone() });
        }
        if n.position.is_some_and(|p| p.iter().any(|x| !x.is_finite())) {
            out.push(Violation::NonFinitePosition { id: id.clone() });
        }
        match n.kind {
            NodeKind::Hand => {
                check_attr(&mut out, n, "side", &["left", "right"]);
                check_attr(&mut out, n, "pose", &["open", "pinch", "grasp"]);
            }
            NodeKind::Action if n.attribute("verb").is_none() => {
                out.push(Violation::MissingAttribute {
                    id: id.clone(),
                    key: "verb".into(),
                });
            }
            _ => {}
        }
    }

    let mut edge_seen = BTreeSet::new();
    let mut edge_dup_reported = BTreeSet::new();
    for e in &g.edges {
        let name = edge_label(e);
        for endpoint in [&e.source, &e.target] {
            if !seen.contains(endpoint) {
                out.push(Violation::DanglingEndpoint {
                    edge: name.clone(),
                    missing: endpoint.as_str().to_string(),
                });
            }
        }
        if e.source == e.target {
            out.push(Violation::SelfLoop { edge: name.clone() });
        }
        if e.kind.category() != e.category {
            out.push(Violation::CategoryMismatch {
                edge: name.clone(),
                expected: e.kind.category(),
                found: e.category,
            });
        }
        if !edge_seen.insert(e.key()) && edge_dup_reported.insert(e.key()) {
            out.push(Violation::DuplicateEdge { edge: name });
        }
    }

    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()).then_with(|| a.cmp(b)));
    out
}

fn check_attr(out: &mut Vec<Violation>, n: &Node, key: &str, allowed: &[&str]) {
    match n.attribute(key) {
        None => out.push(Violation::MissingAttribute {
            id: n.id.to_string(),
            key: key.into(),
        }),
        Some(v) if !allowed.contains(&v) => out.push(Violation::InvalidAttribute {
            id: n.id.to_string(),
            key: key.into(),
            value: v.into(),
        }),
        Some(_) => {}
    }
}
