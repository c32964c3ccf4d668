//! Scripted scenario generation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::HarnessError;
use crate::perception::{DetectionCategory, EventFrame, EventPayload, Gaze, HandObservation, HandPose, HandSide};
use crate::scene_graph::EntityId;

pub const DEFAULT_FRAME_RATE: u32 = 2;

/// Height objects are lifted to while carried, meters.
const LIFT: f64 = 0.5;
/// Hand offset above a held object, meters.
const GRIP: f64 = 0.03;
/// Distance of a placed object from its target, meters.
const PLACE_OFFSET: f64 = 0.10;
const MIN_SPACING: f64 = 0.6;
pub(super) const HEAD: [f64; 3] = [0.0, -0.4, 0.6];
const HAND_REST: [f64; 3] = [0.0, 0.0, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    Grasp { object: String },
    Place { object: String, next_to: String },
    Use { tool: String, verb: String, object: String },
}

impl ScriptAction {
    pub fn describe(&self) -> String {
        match self {
            ScriptAction::Grasp { object } => format!("grasp {object}"),
            ScriptAction::Place { object, next_to } => format!("{object} next_to {next_to}"),
            ScriptAction::Use { tool, verb, object } => format!("{verb} {object} with {tool}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntitySpec {
    pub id: String,
    pub label: String,
    pub position: [f64; 3],
}

/// One scripted step with its ground-truth frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScriptStep {
    pub action: ScriptAction,
    pub say: Option<String>,
    /// Inclusive frame span.
    pub span: (usize, usize),
    /// Frame at which the step's last piece of evidence first appears.
    pub completes_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub entities: Vec<EntitySpec>,
    pub steps: Vec<ScriptStep>,
    pub frame_rate: u32,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthStep {
    pub index: usize,
    pub description: String,
    pub span: (usize, usize),
    pub completes_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub frames: usize,
    pub steps: Vec<GroundTruthStep>,
}

impl GroundTruth {
    /// Number of steps completed by the end of frame `f`.
    pub fn completed_by(&self, f: usize) -> usize {
        self.steps.iter().filter(|s| s.completes_at <= f).count()
    }

    /// Same labels in the coordinates of a stream with `length` frames
    /// inserted before frame `at`.
    pub fn with_insertion(&self, at: usize, length: usize) -> Self {
        let shift = |f: usize| if f >= at { f + length } else { f };
        Self {
            frames: self.frames + length,
            steps: self
                .steps
                .iter()
                .map(|s| GroundTruthStep {
                    span: (
                        if s.index == 0 { 0 } else { shift(s.span.0) },
                        if s.span.1 + 1 >= at {
                            s.span.1 + length
                        } else {
                            s.span.1
                        },
                    ),
                    completes_at: shift(s.completes_at),
                    ..s.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub scenario: Scenario,
    pub frames: Vec<EventFrame>,
    pub ground_truth: GroundTruth,
}

impl Generated {
    pub fn stream_text(&self) -> String {
        crate::perception::write_event_stream(&self.frames)
    }
}

struct Template {
    name: &'static str,
    entities: &'static [&'static str],
    steps: &'static [(Act, Option<&'static str>)],
}

#[derive(Clone, Copy)]
enum Act {
    Grasp(&'static str),
    Place(&'static str, &'static str),
    Use(&'static str, &'static str, &'static str),
}

const TEMPLATES: &[Template] = &[
    Template {
        name: "stew_5step",
        entities: &["onion", "carrot", "pot", "spoon"],
        steps: &[
            (Act::Grasp("onion"), Some("onion goes in first")),
            (Act::Place("onion", "pot"), None),
            (Act::Grasp("carrot"), None),
            (Act::Place("carrot", "pot"), None),
            (Act::Use("spoon", "stir", "pot"), Some("now stir it")),
        ],
    },
    Template {
        name: "organize_closet",
        entities: &["sweater", "scarf", "jacket", "storage_box", "shelf", "hanger_rack"],
        steps: &[
            (Act::Grasp("sweater"), None),
            (Act::Place("sweater", "storage_box"), Some("sweaters go in the box")),
            (Act::Grasp("scarf"), None),
            (Act::Place("scarf", "shelf"), None),
            (Act::Grasp("jacket"), None),
            (Act::Place("jacket", "hanger_rack"), Some("jackets hang on the rack")),
        ],
    },
    Template {
        name: "lab_prep",
        entities: &["reagent_a", "reagent_b", "rack", "pipette", "test_tube"],
        steps: &[
            (Act::Grasp("reagent_a"), None),
            (Act::Place("reagent_a", "rack"), None),
            (Act::Grasp("reagent_b"), None),
            (Act::Place("reagent_b", "rack"), Some("reagents are racked")),
            (Act::Use("pipette", "transfer", "test_tube"), None),
        ],
    },
];

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn lerp(a: [f64; 3], b: [f64; 3], u: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * u,
        a[1] + (b[1] - a[1]) * u,
        a[2] + (b[2] - a[2]) * u,
    ]
}

fn dist2d(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn layout(names: &[&str], rng: &mut ChaCha8Rng) -> Vec<EntitySpec> {
    let mut placed: Vec<EntitySpec> = Vec::new();
    for &name in names {
        let position = loop {
            let p = [rng.random_range(-1.5..1.5), rng.random_range(0.4..2.0), 0.0];
            if placed.iter().all(|e| dist2d(e.position, p) >= MIN_SPACING) {
                break p;
            }
        };
        placed.push(EntitySpec {
            id: name.to_string(),
            label: name.to_string(),
            position,
        });
    }
    placed
}

struct World {
    positions: BTreeMap<String, [f64; 3]>,
    labels: BTreeMap<String, String>,
    hand: [f64; 3],
    held: Option<String>,
    focus: Option<String>,
    frames: Vec<EventFrame>,
    placements: BTreeMap<String, usize>,
}

impl World {
    fn hold_at(&mut self, p: [f64; 3]) {
        if let Some(h) = self.held.clone() {
            self.positions.insert(h, p);
        }
        self.hand = add(p, [0.0, 0.0, GRIP]);
    }

    /// Emits the current world state as one frame and returns its index.
    fn emit(&mut self, pose: HandPose, say: Option<&str>, action: Option<(&str, &str)>, rng: &mut ChaCha8Rng) -> usize {
        let t = self.frames.len() as u64;
        let mut f = EventFrame::new(t);
        for (id, p) in &self.positions {
            f.push(EventPayload::Detection {
                entity_id: EntityId::new(id.clone()).expect("template id"),
                label: self.labels[id].clone(),
                category: DetectionCategory::Object,
                position: *p,
                confidence: (rng.random_range(80..=99) as f64) / 100.0,
            });
        }
        f.push(EventPayload::Hand(HandObservation {
            side: HandSide::Right,
            position: self.hand,
            pose,
        }));
        let target = self
            .focus
            .as_ref()
            .and_then(|id| self.positions.get(id))
            .copied()
            .unwrap_or(self.hand);
        let d = [target[0] - HEAD[0], target[1] - HEAD[1], target[2] - HEAD[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n > 0.0 {
            f.push(EventPayload::Gaze(Gaze {
                origin: HEAD,
                direction: [d[0] / n, d[1] / n, d[2] / n],
            }));
        }
        if let Some(text) = say {
            f.push(EventPayload::Speech { text: text.to_string() });
        }
        if let Some((verb, object)) = action {
            f.push(EventPayload::UserAction {
                verb: verb.to_string(),
                subject_id: HandSide::Right.node_id(),
                object_id: Some(EntityId::new(object).expect("template id")),
                relation: None,
            });
        }
        self.frames.push(f);
        self.frames.len() - 1
    }

    /// Open-handed approach ending just before contact with `object`.
    fn approach(&mut self, object: &str, rng: &mut ChaCha8Rng) {
        self.focus = Some(object.to_string());
        let goal = add(self.positions[object], [0.0, 0.0, 0.3]);
        let start = self.hand;
        let n = rng.random_range(2..=4);
        for i in 1..=n {
            self.hand = lerp(start, goal, i as f64 / n as f64);
            self.emit(HandPose::Open, None, None, rng);
        }
    }

    fn grasp(&mut self, object: &str, say: Option<&str>, rng: &mut ChaCha8Rng) -> usize {
        self.approach(object, rng);
        self.held = Some(object.to_string());
        let p = self.positions[object];
        self.hold_at(p);
        self.emit(HandPose::Grasp, say, None, rng)
    }

    fn place(&mut self, object: &str, target: &str, say: Option<&str>, rng: &mut ChaCha8Rng) -> usize {
        if self.held.as_deref() != Some(object) {
            self.grasp(object, None, rng);
        }
        self.focus = Some(target.to_string());
        let k = self.placements.entry(target.to_string()).or_insert(0);
        let angle = std::f64::consts::PI * (*k as f64) + std::f64::consts::FRAC_PI_2 * ((*k / 2) as f64);
        *k += 1;
        let dest = add(
            self.positions[target],
            [PLACE_OFFSET * angle.cos(), PLACE_OFFSET * angle.sin(), 0.0],
        );
        let start = self.positions[object];
        let n = rng.random_range(2..=4);
        for i in 1..=n {
            let p = lerp(start, dest, i as f64 / (n + 1) as f64);
            self.hold_at([p[0], p[1], LIFT]);
            self.emit(HandPose::Grasp, None, None, rng);
        }
        self.hold_at(dest);
        let at = self.emit(HandPose::Grasp, say, None, rng);
        self.held = None;
        self.hand = add(dest, [0.0, 0.0, 0.3]);
        self.emit(HandPose::Open, None, None, rng);
        at
    }

    /// Grasp of `tool` immediately followed by `verb` actions on `object`.
    fn use_tool(
        &mut self,
        tool: &str,
        verb: &str,
        object: &str,
        say: Option<&str>,
        rng: &mut ChaCha8Rng,
    ) -> (usize, usize) {
        let contact = self.grasp(tool, None, rng);
        self.focus = Some(object.to_string());
        let above = add(self.positions[object], [0.0, 0.0, LIFT]);
        self.hold_at(above);
        let n = rng.random_range(3..=5);
        let first = self.emit(HandPose::Grasp, say, Some((verb, object)), rng);
        for _ in 1..n {
            self.emit(HandPose::Grasp, None, Some((verb, object)), rng);
        }
        (contact, first)
    }
}

/// Generates a scripted recording for `template`, deterministic per seed.
pub fn generate_scenario(template: &str, seed: u64) -> Result<Generated, HarnessError> {
    let tpl = TEMPLATES
        .iter()
        .find(|t| t.name == template)
        .ok_or_else(|| HarnessError::UnknownTemplate {
            name: template.to_string(),
            available: template_names().join(", "),
        })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = layout(tpl.entities, &mut rng);
    let mut world = World {
        positions: entities.iter().map(|e| (e.id.clone(), e.position)).collect(),
        labels: entities.iter().map(|e| (e.id.clone(), e.label.clone())).collect(),
        hand: HAND_REST,
        held: None,
        focus: None,
        frames: Vec::new(),
        placements: BTreeMap::new(),
    };

    // (contact frame, completion frame) per step
    let mut marks = Vec::new();
    for (act, say) in tpl.steps {
        let mark = match *act {
            Act::Grasp(o) => {
                let f = world.grasp(o, *say, &mut rng);
                (f, f)
            }
            Act::Place(o, t) => {
                let f = world.place(o, t, *say, &mut rng);
                (f, f)
            }
            Act::Use(tool, verb, o) => world.use_tool(tool, verb, o, *say, &mut rng),
        };
        marks.push(mark);
    }
    world.held = None;
    world.focus = None;
    let tail = rng.random_range(3..=5);
    for _ in 0..tail {
        world.hand = lerp(world.hand, HAND_REST, 0.5);
        world.emit(HandPose::Open, None, None, &mut rng);
    }

    let frames = world.frames.len();
    let steps: Vec<ScriptStep> = tpl
        .steps
        .iter()
        .enumerate()
        .map(|(i, (act, say))| {
            let start = if i == 0 { 0 } else { marks[i].0 };
            let end = marks.get(i + 1).map(|m| m.0 - 1).unwrap_or(frames - 1);
            let action = match *act {
                Act::Grasp(o) => ScriptAction::Grasp { object: o.into() },
                Act::Place(o, t) => ScriptAction::Place {
                    object: o.into(),
                    next_to: t.into(),
                },
                Act::Use(tool, verb, o) => ScriptAction::Use {
                    tool: tool.into(),
                    verb: verb.into(),
                    object: o.into(),
                },
            };
            ScriptStep {
                action,
                say: say.map(str::to_string),
                span: (start, end),
                completes_at: marks[i].1,
            }
        })
        .collect();
    let ground_truth = GroundTruth {
        frames,
        steps: steps
            .iter()
            .enumerate()
            .map(|(index, s)| GroundTruthStep {
                index,
                description: s.action.describe(),
                span: s.span,
                completes_at: s.completes_at,
            })
            .collect(),
    };
    Ok(Generated {
        scenario: Scenario {
            name: tpl.name.to_string(),
            seed,
            entities,
            steps,
            frame_rate: DEFAULT_FRAME_RATE,
            frames,
        },
        frames: world.frames,
        ground_truth,
    })
}
