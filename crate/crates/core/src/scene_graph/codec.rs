//! Canonical single-line text form of a scene graph.
//!
//! Keys are emitted in sorted order, nodes by id, edges by
//! (source, kind, target). Reals use the shortest decimal form that
//! round-trips. Feature vectors are not stored; they are recomputed on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{Map, Value};

use super::{validate_graph, Edge, EdgeCategory, EdgeKind, EntityId, Node, NodeKind, SceneGraph, Violation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("graph violates {} invariant(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),
}

/// Result of a successful decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub graph: SceneGraph,
    /// Unknown keys that were skipped.
    pub warnings: Vec<String>,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn json_f64(x: f64) -> String {
    serde_json::to_string(&x).expect("finite reals serialize")
}

/// Encodes a valid graph; invalid graphs are refused.
pub fn canonical_encode(g: &SceneGraph) -> Result<Vec<u8>, CodecError> {
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(CodecError::Invalid(violations));
    }
    let g = g.clone().canonicalized();
    let mut out = String::with_capacity(64 + 96 * (g.nodes.len() + g.edges.len()));
    out.push_str("{\"edges\":[");
    for (i, e) in g.edges.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{{\"category\":{},\"kind\":{},\"source\":{},\"target\":{}}}",
            json_str(e.category.as_str()),
            json_str(e.kind.as_str()),
            json_str(e.source.as_str()),
            json_str(e.target.as_str()),
        );
    }
    out.push_str("],\"nodes\":[");
    for (i, n) in g.nodes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"attributes\":{");
        for (j, (k, v)) in n.attributes.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}:{}", json_str(k), json_str(v));
        }
        let _ = write!(
            out,
            "}},\"id\":{},\"kind\":{},\"label\":{}",
            json_str(n.id.as_str()),
            json_str(n.kind.as_str()),
            json_str(&n.label),
        );
        if let Some(p) = n.position {
            let _ = write!(
                out,
                ",\"position\":[{},{},{}]",
                json_f64(p[0]),
                json_f64(p[1]),
                json_f64(p[2])
            );
        }
        out.push('}');
    }
    let _ = write!(out, "],\"t\":{}}}", g.t);
    Ok(out.into_bytes())
}

struct Reader {
    warnings: Vec<String>,
}

fn schema(path: &str, message: impl Into<String>) -> CodecError {
    CodecError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

impl Reader {
    fn object<'a>(&mut self, v: &'a Value, path: &str, known: &[&str]) -> Result<&'a Map<String, Value>, CodecError> {
        let m = v.as_object().ok_or_else(|| schema(path, "expected an object"))?;
        for k in m.keys() {
            if !known.contains(&k.as_str()) {
                let w = format!("ignoring unknown key {path}.{k}");
                log::warn!("{w}");
                self.warnings.push(w);
            }
        }
        Ok(m)
    }
}

fn field<'a>(m: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, CodecError> {
    m.get(key)
        .ok_or_else(|| schema(&format!("{path}.{key}"), "missing field"))
}

fn str_field<'a>(m: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a str, CodecError> {
    field(m, path, key)?
        .as_str()
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected a string"))
}

fn id_field(m: &Map<String, Value>, path: &str, key: &str) -> Result<EntityId, CodecError> {
    let s = str_field(m, path, key)?;
    EntityId::new(s).map_err(|e| schema(&format!("{path}.{key}"), e.to_string()))
}

/// Decodes one canonical graph. Key order on input is free; unknown keys are
/// skipped with a warning. Never returns a partial graph.
pub fn canonical_decode(bytes: &[u8]) -> Result<Decoded, CodecError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| CodecError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut r = Reader { warnings: Vec::new() };
    let top = r.object(&value, "$", &["t", "nodes", "edges"])?;
    let t = field(top, "$", "t")?
        .as_u64()
        .ok_or_else(|| schema("$.t", "expected a non-negative integer"))?;

    let mut g = SceneGraph::new(t);
    let nodes = field(top, "$", "nodes")?
        .as_array()
        .ok_or_else(|| schema("$.nodes", "expected an array"))?;
    for (i, nv) in nodes.iter().enumerate() {
        let path = format!("$.nodes[{i}]");
        let m = r.object(nv, &path, &["id", "kind", "label", "position", "attributes"])?;
        let id = id_field(m, &path, "id")?;
        let kind: NodeKind = str_field(m, &path, "kind")?
            .parse()
            .map_err(|e: String| schema(&format!("{path}.kind"), e))?;
        let label = str_field(m, &path, "label")?;
        let position = match m.get("position") {
            None | Some(Value::Null) => None,
            Some(p) => {
                let arr = p
                    .as_array()
                    .filter(|a| a.len() == 3)
                    .ok_or_else(|| schema(&format!("{path}.position"), "expected 3 numbers"))?;
                let mut xyz = [0.0; 3];
                for (k, x) in arr.iter().enumerate() {
                    xyz[k] = x
                        .as_f64()
                        .ok_or_else(|| schema(&format!("{path}.position[{k}]"), "expected a number"))?;
                }
                Some(xyz)
            }
        };
        let mut attributes = BTreeMap::new();
        if let Some(av) = m.get("attributes") {
            let am = av
                .as_object()
                .ok_or_else(|| schema(&format!("{path}.attributes"), "expected an object"))?;
            for (k, v) in am {
                let s = v
                    .as_str()
                    .ok_or_else(|| schema(&format!("{path}.attributes.{k}"), "expected a string"))?;
                attributes.insert(k.clone(), s.to_string());
            }
        }
        let mut node = Node::new(id, kind, label);
        node.position = position;
        node.attributes = attributes;
        node.refresh_features();
        g.nodes.push(node);
    }

    let edges = field(top, "$", "edges")?
        .as_array()
        .ok_or_else(|| schema("$.edges", "expected an array"))?;
    for (i, ev) in edges.iter().enumerate() {
        let path = format!("$.edges[{i}]");
        let m = r.object(ev, &path, &["source", "kind", "target", "category"])?;
        let kind: EdgeKind = str_field(m, &path, "kind")?
            .parse()
            .map_err(|e: String| schema(&format!("{path}.kind"), e))?;
        let category: EdgeCategory = str_field(m, &path, "category")?
            .parse()
            .map_err(|e: String| schema(&format!("{path}.category"), e))?;
        g.edges.push(Edge {
            source: id_field(m, &path, "source")?,
            target: id_field(m, &path, "target")?,
            kind,
            category,
        });
    }

    let violations = validate_graph(&g);
    if !violations.is_empty() {
        return Err(CodecError::Invalid(violations));
    }
    g.canonicalize();
    Ok(Decoded {
        graph: g,
        warnings: r.warnings,
    })
}
