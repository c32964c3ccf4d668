#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use proptest::prelude::*;
use recallgraph_core::scene_graph::{Edge, EdgeKind, EntityId, Node, NodeKind, SceneGraph};

const LABELS: [&str; 6] = ["onion", "pot", "spoon", "shirt", "rack", "bowl"];

fn arb_position() -> impl Strategy<Value = Option<[f64; 3]>> {
    prop::option::of(prop::array::uniform3(-3.0f64..3.0))
}

fn arb_node(slot: usize) -> impl Strategy<Value = Node> {
    (0..4usize, 0..LABELS.len(), arb_position(), any::<bool>(), 0..3usize).prop_map(
        move |(kind, label, pos, flag, pick)| {
            let id = EntityId::new(format!("n{slot}")).unwrap();
            let mut n = match kind {
                0 => Node::new(id, NodeKind::Object, LABELS[label]),
                1 => Node::new(id, NodeKind::UiElement, "tip").with_attribute("text", LABELS[label]),
                2 => Node::new(id, NodeKind::Action, "stir").with_attribute("verb", "stir"),
                _ => Node::new(id, NodeKind::Hand, "hand")
                    .with_attribute("side", if flag { "left" } else { "right" })
                    .with_attribute("pose", ["open", "pinch", "grasp"][pick]),
            };
            if flag && kind == 0 {
                n = n.with_attribute("color", "red");
            }
            match pos {
                Some(p) => n.with_position(p),
                None => n,
            }
        },
    )
}

/// Valid graphs over up to eight nodes drawn from a small id pool, so that
/// pairs of graphs share ids.
pub fn arb_graph() -> impl Strategy<Value = SceneGraph> {
    let slots = prop::collection::btree_set(0..8usize, 0..8);
    (slots, 0u64..1000)
        .prop_flat_map(|(slots, t)| {
            let slots: Vec<usize> = slots.into_iter().collect();
            let nodes: Vec<_> = slots.iter().map(|&s| arb_node(s)).collect();
            let n = slots.len();
            let edges = prop::collection::vec((0..n.max(1), 0..EdgeKind::ALL.len(), 0..n.max(1)), 0..12);
            (Just(t), nodes, edges)
        })
        .prop_map(|(t, nodes, raw_edges)| {
            let mut g = SceneGraph::new(t);
            let mut seen = BTreeSet::new();
            for (s, k, d) in raw_edges {
                if nodes.is_empty() || s == d {
                    continue;
                }
                let kind = EdgeKind::ALL[k];
                if seen.insert((s, k, d)) {
                    g.edges.push(Edge::new(nodes[s].id.clone(), kind, nodes[d].id.clone()));
                }
            }
            g.nodes = nodes;
            g
        })
}
