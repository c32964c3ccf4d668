//! Turns guidance graphs into user-facing commands.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::reasoning::COMPLETION_ID;
use crate::scene_graph::{EdgeCategory, EdgeKind, EntityId, Node, NodeKind, SceneGraph};

pub const MAX_TEXT_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Highlight,
    Voice,
    Tip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub kind: CommandKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<EntityId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    pub issued_at: u64,
}

fn clip(text: &str) -> String {
    text.chars().take(MAX_TEXT_CHARS).collect()
}

impl ActuationCommand {
    pub fn highlight(target: EntityId, t: u64) -> Self {
        Self {
            kind: CommandKind::Highlight,
            target: Some(target),
            text: None,
            issued_at: t,
        }
    }

    pub fn voice(text: &str, t: u64) -> Self {
        Self {
            kind: CommandKind::Voice,
            target: None,
            text: Some(clip(text)),
            issued_at: t,
        }
    }

    pub fn tip(anchor: EntityId, text: &str, t: u64) -> Self {
        Self {
            kind: CommandKind::Tip,
            target: Some(anchor),
            text: Some(clip(text)),
            issued_at: t,
        }
    }

    /// Identity used for cooldown: everything but the timestamp.
    fn key(&self) -> (CommandKind, Option<EntityId>, Option<String>) {
        (self.kind, self.target.clone(), self.text.clone())
    }

    /// Checks the per-kind field rules.
    pub fn is_well_formed(&self) -> bool {
        let text_ok = self.text.as_ref().is_none_or(|t| t.chars().count() <= MAX_TEXT_CHARS);
        text_ok
            && match self.kind {
                CommandKind::Highlight => self.target.is_some() && self.text.is_none(),
                CommandKind::Voice | CommandKind::Tip => self.text.is_some(),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorConfig {
    /// Timesteps during which an identical command is not repeated.
    pub cooldown: u64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        Self { cooldown: 10 }
    }
}

/// Last issue time of each distinct command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooldownState {
    last: BTreeMap<(CommandKind, Option<EntityId>, Option<String>), u64>,
}

impl CooldownState {
    pub fn new() -> Self {
        Self::default()
    }

    fn admit(&mut self, cmd: &ActuationCommand, cooldown: u64) -> bool {
        let key = cmd.key();
        if let Some(&prev) = self.last.get(&key) {
            if cmd.issued_at >= prev && cmd.issued_at - prev < cooldown {
                return false;
            }
        }
        self.last.insert(key, cmd.issued_at);
        true
    }
}

fn humanize(label: &str) -> String {
    label.replace('_', " ")
}

fn find_text(label: &str) -> String {
    format!("Find the {}", humanize(label))
}

/// Spoken text attached to `user -kind-> target` by the planner, or a
/// template fallback.
fn edge_text(gg: &SceneGraph, kind: EdgeKind, target: &Node) -> String {
    let planned = gg.nodes.iter().find(|n| {
        n.kind == NodeKind::Action
            && n.attribute("guidance") == Some(kind.as_str())
            && n.attribute("target") == Some(target.id.as_str())
    });
    if let Some(text) = planned.and_then(|n| n.attribute("text")) {
        return text.to_string();
    }
    if let Some(text) = target.attribute("completion").and(target.attribute("text")) {
        return text.to_string();
    }
    match kind {
        EdgeKind::ToBeGrasped => format!("Grasp the {}", humanize(&target.label)),
        EdgeKind::Find => find_text(&target.label),
        _ => format!("Look at the {}", humanize(&target.label)),
    }
}

fn priority(kind: EdgeKind) -> u8 {
    match kind {
        EdgeKind::ToBeGrasped => 0,
        EdgeKind::Notify => 1,
        _ => 2,
    }
}

/// Selects commands for one guidance graph.
///
/// At most one Highlight is emitted (to_be_grasped before notify, then by
/// target id). Commands identical to one issued less than `cfg.cooldown`
/// timesteps ago are suppressed. Output order is Highlight, Voice, Tip.
pub fn select_commands(gg: &SceneGraph, cooldown: &mut CooldownState, cfg: &ActuatorConfig) -> Vec<ActuationCommand> {
    let t = gg.t;
    let mut edges: Vec<_> = gg
        .edges_in(EdgeCategory::Guidance)
        .filter_map(|e| gg.node(&e.target).map(|n| (e.kind, n)))
        .collect();
    edges.sort_by(|a, b| (priority(a.0), &a.1.id).cmp(&(priority(b.0), &b.1.id)));

    let mut highlight = None;
    let mut voices: Vec<ActuationCommand> = Vec::new();
    let mut tips: Vec<ActuationCommand> = Vec::new();
    for (kind, node) in edges {
        let completion = node.id.as_str() == COMPLETION_ID || node.attribute("completion") == Some("true");
        let text = edge_text(gg, kind, node);
        if completion {
            voices.push(ActuationCommand::voice(&text, t));
            continue;
        }
        match kind {
            EdgeKind::ToBeGrasped | EdgeKind::Notify if !node.is_virtual() => {
                if highlight.is_none() {
                    highlight = Some(ActuationCommand::highlight(node.id.clone(), t));
                }
                voices.push(ActuationCommand::voice(&text, t));
            }
            _ => {
                let text = find_text(&node.label);
                voices.push(ActuationCommand::voice(&text, t));
                tips.push(ActuationCommand::tip(EntityId::user(), &text, t));
            }
        }
    }

    let mut seen = BTreeSet::new();
    highlight
        .into_iter()
        .chain(voices)
        .chain(tips)
        .filter(|c| seen.insert(c.key()))
        .filter(|c| cooldown.admit(c, cfg.cooldown))
        .collect()
}

/// Drops or rewrites commands that cannot be carried out against `g`.
///
/// A Highlight of a missing or virtual node becomes a Voice asking the user to
/// find it, and a Tip anchored to a missing node is re-anchored to the user.
pub fn feasibility_filter(cmds: Vec<ActuationCommand>, g: &SceneGraph) -> Vec<ActuationCommand> {
    let mut seen = BTreeSet::new();
    cmds.into_iter()
        .map(|c| match c.kind {
            CommandKind::Highlight => {
                let node = c.target.as_ref().and_then(|id| g.node(id));
                match node {
                    Some(n) if !n.is_virtual() => c,
                    Some(n) => ActuationCommand::voice(&find_text(&n.label), c.issued_at),
                    None => {
                        let id = c.target.as_ref().map(EntityId::as_str).unwrap_or("object");
                        let label = id.strip_prefix(crate::reasoning::VIRTUAL_PREFIX).unwrap_or(id);
                        ActuationCommand::voice(&find_text(label), c.issued_at)
                    }
                }
            }
            CommandKind::Tip => {
                let anchored = c.target.as_ref().is_some_and(|id| g.contains_node(id));
                if anchored {
                    c
                } else {
                    ActuationCommand {
                        target: Some(EntityId::user()),
                        ..c
                    }
                }
            }
            CommandKind::Voice => c,
        })
        .filter(|c| seen.insert(c.key()))
        .collect()
}
