//! Step plans inferred from a recorded episode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{physical_triples, ReasoningError, Triple};
use crate::memory::Episode;
use crate::scene_graph::{diff_graphs, EdgeKind, NodeKind, SceneGraph};

/// Segmentation threshold on Physical diff magnitude.
pub const SEGMENT_THRESHOLD: usize = 1;
/// Minimum segment length in frames before merging.
pub const MIN_SEGMENT_FRAMES: usize = 2;

/// Episode-side description of an entity a step refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kind: NodeKind,
    pub features: Vec<f64>,
}

impl Anchor {
    pub fn is_object_like(&self) -> bool {
        matches!(self.kind, NodeKind::Object | NodeKind::UiElement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    /// Physical triples that first appear inside the step's span.
    pub required_triples: BTreeSet<Triple>,
    /// Physical triples present at the end of the span.
    pub postcondition_triples: BTreeSet<Triple>,
    /// Inclusive frame indices into the episode.
    pub span: (usize, usize),
    pub description: String,
    /// Entities of the required triples, keyed by label.
    pub anchors: BTreeMap<String, Anchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub episode_id: String,
    pub steps: Vec<Step>,
    /// Labels appearing in any required triple.
    pub entities: BTreeSet<String>,
}

impl TaskPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Entities that make an observation plan-relevant: every plan entity
    /// except hands and the user, which take part in any task.
    pub fn focus_entities(&self) -> BTreeSet<&str> {
        let actors: BTreeSet<&str> = self
            .steps
            .iter()
            .flat_map(|s| s.anchors.iter())
            .filter(|(_, a)| matches!(a.kind, NodeKind::Hand | NodeKind::User))
            .map(|(l, _)| l.as_str())
            .collect();
        self.entities
            .iter()
            .map(String::as_str)
            .filter(|e| !actors.contains(e))
            .collect()
    }

    /// Canonical text export (`<episode-id>.plan`).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "episode\t{}", self.episode_id);
        let _ = writeln!(out, "steps\t{}", self.steps.len());
        let entities: Vec<&str> = self.entities.iter().map(String::as_str).collect();
        let _ = writeln!(out, "entities\t{}", entities.join(" "));
        for s in &self.steps {
            let _ = writeln!(out, "step\t{}\t{}\t{}\t{}", s.index, s.span.0, s.span.1, s.description);
            for (a, k, b) in &s.required_triples {
                let _ = writeln!(out, "required\t{}\t{a}\t{}\t{b}", s.index, k.as_str());
            }
            for (a, k, b) in &s.postcondition_triples {
                let _ = writeln!(out, "post\t{}\t{a}\t{}\t{b}", s.index, k.as_str());
            }
        }
        out
    }
}

fn humanize(label: &str) -> String {
    label.replace('_', " ")
}

/// Short template description of one triple.
pub fn describe_triple((s, kind, t): &Triple) -> String {
    match kind {
        EdgeKind::Grasping => format!("grasp {t}"),
        EdgeKind::Holds => format!("hold {t}"),
        EdgeKind::NextTo => format!("{s} next_to {t}"),
        EdgeKind::Performs => t.clone(),
        EdgeKind::ActsOn => format!("{s} {t}"),
        other => format!("{s} {} {t}", other.as_str()),
    }
}

/// Spoken instruction for one triple.
pub fn instruction_text((s, kind, t): &Triple) -> String {
    let (s, t) = (humanize(s), humanize(t));
    let mut text = match kind {
        EdgeKind::Grasping => format!("Grasp the {t}"),
        EdgeKind::Holds => format!("Hold the {t}"),
        EdgeKind::NextTo => format!("Put the {s} next to the {t}"),
        EdgeKind::ActsOn => format!("{s} the {t}"),
        EdgeKind::Performs => t,
        EdgeKind::RelatesTo => format!("Bring the {s} to the {t}"),
        other => format!("{s} {} the {t}", humanize(other.as_str())),
    };
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text
}

fn describe(required: &BTreeSet<Triple>) -> String {
    // Acts-on already names the verb; drop the matching performs triple.
    let verbs_with_object: BTreeSet<&str> = required
        .iter()
        .filter(|(_, k, _)| *k == EdgeKind::ActsOn)
        .map(|(s, _, _)| s.as_str())
        .collect();
    required
        .iter()
        .filter(|(_, k, t)| !(*k == EdgeKind::Performs && verbs_with_object.contains(t.as_str())))
        .map(describe_triple)
        .collect::<Vec<_>>()
        .join(", ")
}

fn is_cut_kind(k: EdgeKind) -> bool {
    matches!(k, EdgeKind::Grasping | EdgeKind::ActsOn | EdgeKind::NextTo)
}

/// Segment start indices after change-point detection.
fn change_points(graphs: &[SceneGraph], threshold: usize) -> Result<Vec<usize>, ReasoningError> {
    let mut starts = vec![0];
    for i in 1..graphs.len() {
        let d = diff_graphs(&graphs[i - 1], &graphs[i]).map_err(|e| ReasoningError::InvalidGraph(e.to_string()))?;
        if d.magnitude >= threshold && d.added_physical().any(|e| is_cut_kind(e.kind)) {
            starts.push(i);
        }
    }
    Ok(starts)
}

fn seg_len(starts: &[usize], i: usize, n: usize) -> usize {
    starts.get(i + 1).copied().unwrap_or(n) - starts[i]
}

/// Merges segments shorter than `min_len` into their successor (the last one
/// into its predecessor).
fn merge_short(mut starts: Vec<usize>, n: usize, min_len: usize) -> Vec<usize> {
    let mut i = 0;
    while i < starts.len() {
        if seg_len(&starts, i, n) < min_len && starts.len() > 1 {
            if i + 1 < starts.len() {
                starts.remove(i + 1);
            } else {
                starts.remove(i);
            }
            continue;
        }
        i += 1;
    }
    starts
}

/// Infers the user's step sequence from an episode.
pub fn infer_task_plan(e: &Episode) -> Result<TaskPlan, ReasoningError> {
    infer_task_plan_with(e, SEGMENT_THRESHOLD, MIN_SEGMENT_FRAMES)
}

pub fn infer_task_plan_with(e: &Episode, threshold: usize, min_len: usize) -> Result<TaskPlan, ReasoningError> {
    let graphs = &e.graphs;
    if graphs.is_empty() {
        return Err(ReasoningError::UnplannableEpisode(e.meta.id.clone()));
    }
    let n = graphs.len();
    let phys: Vec<BTreeSet<Triple>> = graphs.iter().map(physical_triples).collect();
    let fresh: Vec<BTreeSet<Triple>> = (0..n)
        .map(|i| {
            if i == 0 {
                phys[0].clone()
            } else {
                phys[i].difference(&phys[i - 1]).cloned().collect()
            }
        })
        .collect();

    let starts = merge_short(change_points(graphs, threshold)?, n, min_len.max(1));

    // (start, end inclusive, required)
    let mut segments: Vec<(usize, usize, BTreeSet<Triple>)> = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(n) - 1;
            let required = (s..=end).flat_map(|j| fresh[j].iter().cloned()).collect();
            (s, end, required)
        })
        .collect();

    if segments.iter().all(|s| s.2.is_empty()) {
        return Err(ReasoningError::UnplannableEpisode(e.meta.id.clone()));
    }
    // Empty segments merge forward; a trailing empty one merges backward.
    let mut i = 0;
    while i < segments.len() {
        if segments[i].2.is_empty() {
            if i + 1 < segments.len() {
                let start = segments[i].0;
                segments.remove(i);
                segments[i].0 = start;
            } else {
                let end = segments[i].1;
                segments.remove(i);
                segments[i - 1].1 = end;
            }
            continue;
        }
        i += 1;
    }

    let mut entities = BTreeSet::new();
    let steps = segments
        .into_iter()
        .enumerate()
        .map(|(index, (start, end, required))| {
            let mut anchors = BTreeMap::new();
            for (a, _, b) in &required {
                entities.insert(a.clone());
                entities.insert(b.clone());
                for label in [a, b] {
                    if anchors.contains_key(label) {
                        continue;
                    }
                    let node = (start..=end)
                        .rev()
                        .find_map(|j| graphs[j].nodes.iter().find(|x| &x.label == label));
                    if let Some(node) = node {
                        anchors.insert(
                            label.clone(),
                            Anchor {
                                kind: node.kind,
                                features: node.features.clone(),
                            },
                        );
                    }
                }
            }
            Step {
                index,
                description: describe(&required),
                postcondition_triples: phys[end].clone(),
                required_triples: required,
                span: (start, end),
                anchors,
            }
        })
        .collect();

    Ok(TaskPlan {
        episode_id: e.meta.id.clone(),
        steps,
        entities,
    })
}
