//! Next-step guidance expressed as an augmented scene graph.

use std::collections::BTreeMap;

use super::plan::{instruction_text, Anchor};
use super::{ProgressState, StepPointer, TaskPlan, Triple};
use crate::scene_graph::{feature_cosine, EdgeKind, EntityId, Node, NodeKind, SceneGraph, USER_ID};

/// Id of the node carrying the completion notice.
pub const COMPLETION_ID: &str = "guidance.complete";
/// Prefix of guidance Action node ids.
pub const GUIDANCE_PREFIX: &str = "guidance.";
/// Prefix of placeholder nodes for unobserved entities.
pub const VIRTUAL_PREFIX: &str = "virtual.";

fn ensure_user(g: &mut SceneGraph) {
    if g.node_by_str(USER_ID).is_none() {
        g.nodes.push(Node::new(EntityId::user(), NodeKind::User, "user"));
    }
}

fn fresh_id(g: &SceneGraph, base: &str) -> EntityId {
    let mut clean: String = base
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    clean.truncate(48);
    let mut n = 0;
    loop {
        let candidate = if n == 0 { clean.clone() } else { format!("{clean}.{n}") };
        if g.node_by_str(&candidate).is_none() {
            return EntityId::new(candidate).expect("sanitized id");
        }
        n += 1;
    }
}

/// Finds the visible object node for `label`, preferring the one closest in
/// features to the episode's node, then the smallest id.
fn resolve<'a>(g: &'a SceneGraph, label: &str, anchor: Option<&Anchor>) -> Option<&'a Node> {
    let mut candidates: Vec<&Node> = g
        .nodes
        .iter()
        .filter(|n| n.label == label && matches!(n.kind, NodeKind::Object | NodeKind::UiElement) && !n.is_virtual())
        .collect();
    candidates.sort_by(|a, b| {
        let score = |n: &Node| anchor.map(|x| feature_cosine(&n.features, &x.features)).unwrap_or(0.0);
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    candidates.first().copied()
}

struct Builder<'a> {
    g: SceneGraph,
    plan: &'a TaskPlan,
    step: usize,
    placeholders: BTreeMap<String, EntityId>,
    actions: usize,
}

impl Builder<'_> {
    fn anchor(&self, label: &str) -> Option<&Anchor> {
        self.plan.steps[self.step].anchors.get(label)
    }

    fn object_like(&self, label: &str) -> bool {
        self.anchor(label).is_some_and(Anchor::is_object_like)
    }

    fn placeholder(&mut self, label: &str) -> EntityId {
        if let Some(id) = self.placeholders.get(label) {
            return id.clone();
        }
        let id = fresh_id(&self.g, &format!("{VIRTUAL_PREFIX}{label}"));
        let kind = self.anchor(label).map(|a| a.kind).unwrap_or(NodeKind::Object);
        self.g
            .nodes
            .push(Node::new(id.clone(), kind, label).with_attribute("virtual", "true"));
        self.placeholders.insert(label.to_string(), id.clone());
        id
    }

    /// Adds `user -kind-> target` plus a guidance Action node describing it.
    fn guide(&mut self, kind: EdgeKind, target: &EntityId, text: &str) {
        if self.g.has_edge(USER_ID, kind, target.as_str()) {
            return;
        }
        let g = std::mem::replace(&mut self.g, SceneGraph::new(0));
        self.g = g.with_edge(USER_ID, kind, target.as_str());
        let id = fresh_id(&self.g, &format!("{GUIDANCE_PREFIX}{}", self.actions));
        self.actions += 1;
        let verb = match kind {
            EdgeKind::Find => "find",
            EdgeKind::ToBeGrasped => "grasp",
            _ => "notify",
        };
        self.g.nodes.push(
            Node::new(id, NodeKind::Action, verb)
                .with_attribute("verb", verb)
                .with_attribute("guidance", kind.as_str())
                .with_attribute("target", target.as_str())
                .with_attribute("step", self.step.to_string())
                .with_attribute("text", text),
        );
    }

    fn target(&mut self, label: &str, kind: EdgeKind, text: &str) {
        let found = resolve(&self.g, label, self.anchor(label)).map(|n| n.id.clone());
        match found {
            Some(id) => self.guide(kind, &id, text),
            None => {
                let id = self.placeholder(label);
                self.guide(EdgeKind::Find, &id, &format!("Find the {}", label.replace('_', " ")));
            }
        }
    }

    fn triple(&mut self, t: &Triple) {
        let (a, kind, b) = t;
        let text = instruction_text(t);
        match kind {
            EdgeKind::Grasping => self.target(b, EdgeKind::ToBeGrasped, &text),
            EdgeKind::Performs => {
                if self.object_like(a) {
                    self.target(a, EdgeKind::Notify, &text);
                }
            }
            _ => {
                if self.object_like(a) && resolve(&self.g, a, self.anchor(a)).is_none() {
                    let id = self.placeholder(a);
                    self.guide(EdgeKind::Find, &id, &format!("Find the {}", a.replace('_', " ")));
                }
                if self.object_like(b) || self.anchor(b).is_none() {
                    self.target(b, EdgeKind::Notify, &text);
                }
            }
        }
    }
}

/// Builds the guidance graph for the current step: `g` plus Guidance edges
/// from the user to what should be grasped, attended to or found.
pub fn plan_action(state: &ProgressState, plan: &TaskPlan, g: &SceneGraph) -> SceneGraph {
    let mut out = g.clone();
    ensure_user(&mut out);
    let step = match state.current_step {
        StepPointer::Step(k) if k < plan.steps.len() => k,
        _ => {
            let id = fresh_id(&out, COMPLETION_ID);
            out.nodes.push(
                Node::new(id.clone(), NodeKind::UiElement, "task_complete")
                    .with_attribute("completion", "true")
                    .with_attribute("text", "All steps are complete"),
            );
            return out.with_edge(USER_ID, EdgeKind::Notify, id.as_str());
        }
    };
    let missing: Vec<Triple> = state.missing(plan, step).cloned().collect();
    let mut b = Builder {
        g: out,
        plan,
        step,
        placeholders: BTreeMap::new(),
        actions: 0,
    };
    for t in &missing {
        b.triple(t);
    }
    b.g
}
