//! Exhaustive step alignment, used as a reference for the online tracker.

use std::collections::BTreeSet;

use super::{physical_triples, ReasoningError, TaskPlan, Triple};
use crate::scene_graph::SceneGraph;

pub const MAX_ALIGN_STEPS: usize = 8;
pub const MAX_ALIGN_FRAMES: usize = 200;
const MAX_COMBINATIONS: u128 = 20_000_000;
const EPS: f64 = 1e-12;

/// Best segmentation of an observation sequence into the plan's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// First frame of each block; `starts[0] == 0`.
    pub starts: Vec<usize>,
    /// Inclusive frame span of each block.
    pub spans: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    /// Steps whose required triples all newly appear inside their block.
    pub covered: Vec<bool>,
    pub total: f64,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n.saturating_sub(k));
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

struct Search<'a> {
    required: Vec<&'a BTreeSet<Triple>>,
    /// Frames carrying newly appearing relevant triples, with those triples.
    events: Vec<(usize, BTreeSet<Triple>)>,
    /// Inclusive position ranges a boundary may fall in.
    classes: Vec<(usize, usize)>,
    n_frames: usize,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    /// Latest boundary positions realizing the chosen classes, if any.
    fn realize(&self, chosen: &[usize]) -> Option<Vec<usize>> {
        let mut starts = vec![0; chosen.len() + 1];
        let mut upper = self.n_frames;
        for (j, &c) in chosen.iter().enumerate().rev() {
            let (lo, hi) = self.classes[c];
            let b = hi.min(upper - 1);
            if b < lo || b == 0 {
                return None;
            }
            starts[j + 1] = b;
            upper = b;
        }
        Some(starts)
    }

    fn score(&self, starts: &[usize]) -> Vec<f64> {
        let n = self.required.len();
        (0..n)
            .map(|j| {
                let lo = starts[j];
                let hi = starts.get(j + 1).copied().unwrap_or(self.n_frames);
                let seen: BTreeSet<&Triple> = self
                    .events
                    .iter()
                    .filter(|(f, _)| *f >= lo && *f < hi)
                    .flat_map(|(_, ts)| ts.iter())
                    .collect();
                let req = self.required[j];
                if req.is_empty() {
                    1.0
                } else {
                    req.iter().filter(|t| seen.contains(t)).count() as f64 / req.len() as f64
                }
            })
            .collect()
    }

    fn visit(&mut self, chosen: &mut Vec<usize>, from: usize, remaining: usize) {
        if remaining == 0 {
            let Some(starts) = self.realize(chosen) else { return };
            let total: f64 = self.score(&starts).iter().sum();
            let better = match &self.best {
                None => true,
                Some((bt, bs)) => total > bt + EPS || ((total - bt).abs() <= EPS && starts > *bs),
            };
            if better {
                self.best = Some((total, starts));
            }
            return;
        }
        for c in from..self.classes.len() {
            chosen.push(c);
            self.visit(chosen, c, remaining - 1);
            chosen.pop();
        }
    }
}

/// Exhaustively aligns `graphs` to the plan's steps.
///
/// Each step gets one contiguous block; a block scores the fraction of the
/// step's required triples that newly appear inside it. The highest total
/// wins and ties go to the latest boundaries. Only boundary positions that
/// change which appearances fall in which block are enumerated.
pub fn brute_force_align(plan: &TaskPlan, graphs: &[SceneGraph]) -> Result<Alignment, ReasoningError> {
    let n = plan.steps.len();
    let frames = graphs.len();
    if n > MAX_ALIGN_STEPS || frames > MAX_ALIGN_FRAMES || n == 0 || frames < n {
        return Err(ReasoningError::ScaleExceeded { steps: n, frames });
    }
    let relevant: BTreeSet<&Triple> = plan.steps.iter().flat_map(|s| s.required_triples.iter()).collect();
    let phys: Vec<BTreeSet<Triple>> = graphs.iter().map(physical_triples).collect();
    let mut events = Vec::new();
    for f in 0..frames {
        let fresh: BTreeSet<Triple> = phys[f]
            .iter()
            .filter(|t| f == 0 || !phys[f - 1].contains(*t))
            .filter(|t| relevant.contains(t))
            .cloned()
            .collect();
        if !fresh.is_empty() {
            events.push((f, fresh));
        }
    }

    let mut classes = Vec::new();
    let mut lo = 1;
    for (f, _) in &events {
        if *f >= 1 {
            if *f >= lo {
                classes.push((lo, *f));
            }
            lo = f + 1;
        }
    }
    if lo < frames {
        classes.push((lo, frames - 1));
    }

    let combos = binomial((classes.len() + n - 2) as u128, (n - 1) as u128);
    if combos > MAX_COMBINATIONS {
        return Err(ReasoningError::ScaleExceeded { steps: n, frames });
    }

    let mut search = Search {
        required: plan.steps.iter().map(|s| &s.required_triples).collect(),
        events,
        classes,
        n_frames: frames,
        best: None,
    };
    if n == 1 {
        search.best = Some((0.0, vec![0]));
    } else {
        search.visit(&mut Vec::new(), 0, n - 1);
    }
    let (_, starts) = search
        .best
        .clone()
        .ok_or(ReasoningError::ScaleExceeded { steps: n, frames })?;
    let scores = search.score(&starts);
    let spans = (0..n)
        .map(|j| (starts[j], starts.get(j + 1).copied().unwrap_or(frames) - 1))
        .collect();
    let covered = scores.iter().map(|&s| s >= 1.0 - EPS).collect();
    Ok(Alignment {
        total: scores.iter().sum(),
        starts,
        spans,
        scores,
        covered,
    })
}
