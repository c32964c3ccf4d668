use std::collections::BTreeMap;

use super::{validate_graph, Edge, EdgeCategory, EntityId, Node, SceneGraph, Violation};

/// Pure set delta between two graphs.
///
/// A node whose content changed under the same id appears in both
/// `removed_nodes` (old value) and `added_nodes` (new value).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphDiff {
    /// Timestep of the graph the diff leads to.
    pub t: u64,
    pub added_nodes: Vec<Node>,
    pub removed_nodes: Vec<Node>,
    pub added_edges: Vec<Edge>,
    pub removed_edges: Vec<Edge>,
    /// Number of Physical edges added or removed.
    pub magnitude: usize,
}

impl GraphDiff {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
    }

    pub fn recompute_magnitude(&self) -> usize {
        self.added_edges
            .iter()
            .chain(&self.removed_edges)
            .filter(|e| e.category == EdgeCategory::Physical)
            .count()
    }

    pub fn added_physical(&self) -> impl Iterator<Item = &Edge> {
        self.added_edges.iter().filter(|e| e.category == EdgeCategory::Physical)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("graph at t={t} is invalid: {}", .violations.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid { t: u64, violations: Vec<Violation> },
    #[error("diff is inconsistent with the base graph: {0}")]
    Inconsistent(String),
}

fn check(g: &SceneGraph) -> Result<(), DiffError> {
    let violations = validate_graph(g);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(DiffError::Invalid { t: g.t, violations })
    }
}

/// Set difference of `a` and `b` on node ids and edge triples.
pub fn diff_graphs(a: &SceneGraph, b: &SceneGraph) -> Result<GraphDiff, DiffError> {
    check(a)?;
    check(b)?;
    let a_nodes: BTreeMap<&EntityId, &Node> = a.nodes.iter().map(|n| (&n.id, n)).collect();
    let b_nodes: BTreeMap<&EntityId, &Node> = b.nodes.iter().map(|n| (&n.id, n)).collect();

    let mut removed_nodes: Vec<Node> = a_nodes
        .iter()
        .filter(|(id, n)| b_nodes.get(*id) != Some(*n))
        .map(|(_, n)| (*n).clone())
        .collect();
    let mut added_nodes: Vec<Node> = b_nodes
        .iter()
        .filter(|(id, n)| a_nodes.get(*id) != Some(*n))
        .map(|(_, n)| (*n).clone())
        .collect();
    removed_nodes.sort_by(|x, y| x.id.cmp(&y.id));
    added_nodes.sort_by(|x, y| x.id.cmp(&y.id));

    let mut removed_edges: Vec<Edge> = a.edges.iter().filter(|e| !b.edges.contains(e)).cloned().collect();
    let mut added_edges: Vec<Edge> = b.edges.iter().filter(|e| !a.edges.contains(e)).cloned().collect();
    removed_edges.sort();
    added_edges.sort();

    let mut d = GraphDiff {
        t: b.t,
        added_nodes,
        removed_nodes,
        added_edges,
        removed_edges,
        magnitude: 0,
    };
    d.magnitude = d.recompute_magnitude();
    Ok(d)
}

/// Applies `d` to `a`. Removals must name elements present in `a`.
pub fn apply_diff(a: &SceneGraph, d: &GraphDiff) -> Result<SceneGraph, DiffError> {
    let mut g = a.clone();
    for e in &d.removed_edges {
        let pos = g.edges.iter().position(|x| x == e).ok_or_else(|| {
            DiffError::Inconsistent(format!(
                "cannot remove absent edge {}-{}->{}",
                e.source, e.kind, e.target
            ))
        })?;
        g.edges.swap_remove(pos);
    }
    for n in &d.removed_nodes {
        let pos = g
            .nodes
            .iter()
            .position(|x| x == n)
            .ok_or_else(|| DiffError::Inconsistent(format!("cannot remove absent node {}", n.id)))?;
        g.nodes.swap_remove(pos);
    }
    for n in &d.added_nodes {
        if g.contains_node(&n.id) {
            return Err(DiffError::Inconsistent(format!(
                "cannot add node {}: id already present",
                n.id
            )));
        }
        g.nodes.push(n.clone());
    }
    for e in &d.added_edges {
        if g.edges.iter().any(|x| x.key() == e.key()) {
            return Err(DiffError::Inconsistent(format!(
                "cannot add edge {}-{}->{}: already present",
                e.source, e.kind, e.target
            )));
        }
        g.edges.push(e.clone());
    }
    g.t = d.t;
    g.canonicalize();
    Ok(g)
}
