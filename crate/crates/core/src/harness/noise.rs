//! Seeded stream perturbation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::generate::HEAD;
use super::HarnessError;
use crate::perception::{DetectionCategory, EgoEvent, EventFrame, EventPayload, Gaze};
use crate::scene_graph::EntityId;

const PROFILES_TOML: &str = include_str!("../../data/noise_profiles.toml");

const SPURIOUS_LABELS: &[&str] = &["cup", "book", "bottle", "towel", "keys"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interruption {
    pub start: usize,
    pub length: usize,
    pub distractor: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Probability that a detection is removed.
    pub detection_dropout: f64,
    /// Standard deviation of position noise, meters.
    pub position_jitter: f64,
    /// Expected spurious detections per frame.
    pub spurious_rate: f64,
    pub interruption: Option<Interruption>,
}

impl NoiseProfile {
    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidProfile(m));
        if !(0.0..=1.0).contains(&self.detection_dropout) {
            return bad(format!("detection_dropout {} outside [0, 1]", self.detection_dropout));
        }
        if !(self.position_jitter >= 0.0 && self.position_jitter.is_finite()) {
            return bad(format!("position_jitter {} must be >= 0", self.position_jitter));
        }
        if !(self.spurious_rate >= 0.0 && self.spurious_rate.is_finite()) {
            return bad(format!("spurious_rate {} must be >= 0", self.spurious_rate));
        }
        if let Some(i) = &self.interruption {
            if EntityId::new(i.distractor.clone()).is_err() {
                return bad(format!("distractor {:?} is not a valid entity id", i.distractor));
            }
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

/// Named profiles keyed by name.
pub fn parse_profiles(text: &str) -> Result<BTreeMap<String, NoiseProfile>, HarnessError> {
    let profiles: BTreeMap<String, NoiseProfile> =
        toml::from_str(text).map_err(|e| HarnessError::InvalidProfile(e.to_string()))?;
    for p in profiles.values() {
        p.check()?;
    }
    Ok(profiles)
}

/// The profiles shipped with the crate.
pub fn builtin_profiles() -> BTreeMap<String, NoiseProfile> {
    parse_profiles(PROFILES_TOML).expect("bundled noise profiles parse")
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Applies `profile` to `frames`, deterministic per seed. Each noise source
/// draws from its own random stream. Timesteps are renumbered from the first
/// frame's `t` when an interruption is inserted.
pub fn perturb_stream(frames: &[EventFrame], profile: &NoiseProfile, seed: u64) -> Vec<EventFrame> {
    if profile.is_clean() {
        return frames.to_vec();
    }
    let mut out: Vec<EventFrame> = frames.to_vec();

    if let Some(i) = &profile.interruption {
        let at = i.start.min(out.len());
        let base = out.first().map(|f| f.t).unwrap_or(0);
        let distractor = EntityId::new(i.distractor.clone()).expect("checked distractor");
        let mut rng = stream(seed, 4);
        let inserted: Vec<EventFrame> = (0..i.length)
            .map(|_| {
                let mut f = EventFrame::new(0);
                let position = [rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.0), 0.4];
                f.push(EventPayload::Detection {
                    entity_id: distractor.clone(),
                    label: i.distractor.clone(),
                    category: DetectionCategory::Object,
                    position,
                    confidence: 0.95,
                });
                // Looking at the distractor keeps the frame non-empty even
                // when its detection is dropped.
                let d = [position[0] - HEAD[0], position[1] - HEAD[1], position[2] - HEAD[2]];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                f.push(EventPayload::Gaze(Gaze {
                    origin: HEAD,
                    direction: [d[0] / n, d[1] / n, d[2] / n],
                }));
                f
            })
            .collect();
        out.splice(at..at, inserted);
        for (k, f) in out.iter_mut().enumerate() {
            f.t = base + k as u64;
            for e in &mut f.events {
                e.t = f.t;
            }
        }
    }

    if profile.spurious_rate > 0.0 {
        let mut rng = stream(seed, 3);
        let poisson = Poisson::new(profile.spurious_rate).expect("positive rate");
        for f in &mut out {
            let n = poisson.sample(&mut rng) as usize;
            for k in 0..n {
                let label = SPURIOUS_LABELS[rng.random_range(0..SPURIOUS_LABELS.len())];
                f.events.push(EgoEvent::new(
                    f.t,
                    EventPayload::Detection {
                        entity_id: EntityId::new(format!("spurious.{}.{k}", f.t)).expect("generated id"),
                        label: label.to_string(),
                        category: DetectionCategory::Object,
                        position: [rng.random_range(-1.5..1.5), rng.random_range(0.4..2.0), 0.0],
                        confidence: rng.random_range(0.5..1.0),
                    },
                ));
            }
        }
    }

    if profile.detection_dropout > 0.0 {
        let mut rng = stream(seed, 1);
        for f in &mut out {
            f.events.retain(|e| {
                !matches!(e.payload, EventPayload::Detection { .. }) || !rng.random_bool(profile.detection_dropout)
            });
        }
    }

    if profile.position_jitter > 0.0 {
        let mut rng = stream(seed, 2);
        let normal = Normal::new(0.0, profile.position_jitter).expect("finite jitter");
        for f in &mut out {
            for e in &mut f.events {
                let p = match &mut e.payload {
                    EventPayload::Detection { position, .. } => position,
                    EventPayload::Hand(h) => &mut h.position,
                    _ => continue,
                };
                for x in p.iter_mut() {
                    *x += normal.sample(&mut rng);
                }
            }
        }
    }

    out
}
