use std::collections::{BTreeMap, BTreeSet};

use super::{EdgeCategory, EdgeKind, SceneGraph};

/// Labeled relation triple `(source label, kind, target label)`.
pub type LabelTriple = (String, EdgeKind, String);

/// Triples of every edge whose category passes `keep`, in edge order.
/// Edges with an unresolvable endpoint are skipped.
pub fn relation_triples(g: &SceneGraph, keep: impl Fn(EdgeCategory) -> bool) -> Vec<LabelTriple> {
    g.edges
        .iter()
        .filter(|e| keep(e.category))
        .filter_map(|e| {
            let s = g.node(&e.source)?;
            let t = g.node(&e.target)?;
            Some((s.label.clone(), e.kind, t.label.clone()))
        })
        .collect()
}

fn multiset(g: &SceneGraph) -> BTreeMap<LabelTriple, usize> {
    let mut m = BTreeMap::new();
    for t in relation_triples(g, |c| c != EdgeCategory::Guidance) {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Multiset Jaccard similarity of non-Guidance relation triples.
///
/// When neither graph has such triples, falls back to node labels: 1.0 if the
/// label sets are equal, otherwise their set Jaccard.
pub fn graph_similarity(a: &SceneGraph, b: &SceneGraph) -> f64 {
    let ma = multiset(a);
    let mb = multiset(b);
    if ma.is_empty() && mb.is_empty() {
        let la: BTreeSet<&str> = a.nodes.iter().map(|n| n.label.as_str()).collect();
        let lb: BTreeSet<&str> = b.nodes.iter().map(|n| n.label.as_str()).collect();
        if la == lb {
            return 1.0;
        }
        let inter = la.intersection(&lb).count();
        let union = la.union(&lb).count();
        return inter as f64 / union as f64;
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    let keys: BTreeSet<&LabelTriple> = ma.keys().chain(mb.keys()).collect();
    for k in keys {
        let x = ma.get(k).copied().unwrap_or(0);
        let y = mb.get(k).copied().unwrap_or(0);
        inter += x.min(y);
        union += x.max(y);
    }
    inter as f64 / union as f64
}
