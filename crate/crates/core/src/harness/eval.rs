//! Suite specs and per-run metrics.

use serde::Serialize;

use super::{GroundTruth, HarnessError};
use crate::reasoning::StepPointer;

/// Frames of slack when matching step boundaries.
pub const BOUNDARY_TOLERANCE: usize = 2;

const BUILTIN_SUITES: &[(&str, &str)] = &[
    ("default", include_str!("../../data/suites/default.suite")),
    ("drop10", include_str!("../../data/suites/drop10.suite")),
    ("clean", include_str!("../../data/suites/clean.suite")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteEntry {
    pub template: String,
    pub seed: u64,
    pub profile: String,
}

/// Parses `template seed profile` lines; blank lines and `#` comments are
/// ignored.
pub fn parse_suite(text: &str) -> Result<Vec<SuiteEntry>, HarnessError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| HarnessError::InvalidSuite {
            line: i + 1,
            message: m.to_string(),
        };
        if fields.len() != 3 {
            return Err(bad("expected `template seed noise_profile`"));
        }
        let seed = fields[1]
            .parse()
            .map_err(|_| bad("seed is not a non-negative integer"))?;
        out.push(SuiteEntry {
            template: fields[0].to_string(),
            seed,
            profile: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn builtin_suite(name: &str) -> Option<Vec<SuiteEntry>> {
    BUILTIN_SUITES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_suite(text).expect("bundled suite parses"))
}

pub fn builtin_suite_names() -> Vec<&'static str> {
    BUILTIN_SUITES.iter().map(|(n, _)| *n).collect()
}

/// Tracker output after one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceFrame {
    pub current_step: StepPointer,
    pub satisfied: Vec<bool>,
    pub off_task: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub steps_total: usize,
    pub steps_completed: usize,
    pub completion_rate: f64,
    /// Frames until the plan completed, if it did.
    pub completion_frames: Option<usize>,
    pub boundary_f1: f64,
    pub next_step_accuracy: f64,
    pub off_task_frames: usize,
}

/// Scores a per-frame trace against ground truth.
pub fn evaluate_run(gt: &GroundTruth, trace: &[TraceFrame]) -> Result<RunMetrics, HarnessError> {
    if trace.len() != gt.frames {
        return Err(HarnessError::LengthMismatch {
            expected: gt.frames,
            found: trace.len(),
        });
    }
    let steps_total = trace.last().map(|f| f.satisfied.len()).unwrap_or(0);
    let steps_completed = trace
        .last()
        .map(|f| f.satisfied.iter().filter(|s| **s).count())
        .unwrap_or(0);
    let completion_rate = if steps_total == 0 {
        0.0
    } else {
        steps_completed as f64 / steps_total as f64
    };
    let completion_frames = trace.iter().position(|f| f.current_step.is_complete()).map(|i| i + 1);

    let predicted: Vec<(usize, usize)> = (0..steps_total)
        .filter_map(|k| trace.iter().position(|f| f.satisfied[k]).map(|f| (k, f)))
        .collect();
    let hits = predicted
        .iter()
        .filter(|(k, f)| {
            gt.steps
                .get(*k)
                .is_some_and(|s| s.completes_at.abs_diff(*f) <= BOUNDARY_TOLERANCE)
        })
        .count();
    let boundary_f1 = if predicted.is_empty() && gt.steps.is_empty() {
        1.0
    } else if hits == 0 {
        0.0
    } else {
        let p = hits as f64 / predicted.len() as f64;
        let r = hits as f64 / gt.steps.len() as f64;
        2.0 * p * r / (p + r)
    };

    let correct = trace
        .iter()
        .enumerate()
        .filter(|(f, tf)| tf.current_step.ordinal(steps_total) == gt.completed_by(*f))
        .count();
    let next_step_accuracy = if trace.is_empty() {
        1.0
    } else {
        correct as f64 / trace.len() as f64
    };

    Ok(RunMetrics {
        steps_total,
        steps_completed,
        completion_rate,
        completion_frames,
        boundary_f1,
        next_step_accuracy,
        off_task_frames: trace.iter().filter(|f| f.off_task).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::GroundTruthStep;

    fn gt(completes: &[usize], frames: usize) -> GroundTruth {
        GroundTruth {
            frames,
            steps: completes
                .iter()
                .enumerate()
                .map(|(index, &c)| GroundTruthStep {
                    index,
                    description: String::new(),
                    span: (0, 0),
                    completes_at: c,
                })
                .collect(),
        }
    }

    /// Trace that satisfies step k exactly at `at[k]` (usize::MAX = never).
    fn trace(at: &[usize], frames: usize) -> Vec<TraceFrame> {
        (0..frames)
            .map(|f| {
                let satisfied: Vec<bool> = at.iter().map(|&a| a <= f).collect();
                let done = satisfied.iter().take_while(|s| **s).count();
                TraceFrame {
                    current_step: if done == at.len() {
                        StepPointer::Complete
                    } else {
                        StepPointer::Step(done)
                    },
                    satisfied,
                    off_task: false,
                }
            })
            .collect()
    }

    #[test]
    fn perfect_trace() {
        let g = gt(&[2, 5, 9, 12, 15], 20);
        let m = evaluate_run(&g, &trace(&[2, 5, 9, 12, 15], 20)).unwrap();
        assert_eq!(m.completion_rate, 1.0);
        assert_eq!(m.boundary_f1, 1.0);
        assert_eq!(m.next_step_accuracy, 1.0);
        assert_eq!(m.completion_frames, Some(16));
    }

    #[test]
    fn stalled_trace() {
        let g = gt(&[2, 5], 10);
        let m = evaluate_run(&g, &trace(&[usize::MAX, usize::MAX], 10)).unwrap();
        assert_eq!(m.completion_rate, 0.0);
        assert_eq!(m.completion_frames, None);
        assert_eq!(m.boundary_f1, 0.0);
    }

    #[test]
    fn one_missing_step_of_five() {
        let g = gt(&[2, 5, 9, 12, 15], 20);
        let m = evaluate_run(&g, &trace(&[2, 5, 9, 12, usize::MAX], 20)).unwrap();
        assert_eq!(m.completion_rate, 0.8);
        // four of four predictions hit, four of five truths recovered
        assert!((m.boundary_f1 - 2.0 * 0.8 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn late_boundaries_outside_tolerance() {
        let g = gt(&[2, 10], 20);
        let m = evaluate_run(&g, &trace(&[4, 13], 20)).unwrap();
        assert_eq!(m.boundary_f1, 0.5);
        assert_eq!(m.next_step_accuracy, 15.0 / 20.0);
    }

    #[test]
    fn length_mismatch() {
        let g = gt(&[2], 10);
        assert!(matches!(
            evaluate_run(&g, &trace(&[2], 9)),
            Err(HarnessError::LengthMismatch { expected: 10, found: 9 })
        ));
    }

    #[test]
    fn suite_parsing() {
        let s = parse_suite("# c\nstew_5step 3 drop10\n\nlab_prep 1 clean # trailing\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].seed, 3);
        assert_eq!(s[1].profile, "clean");
        assert!(matches!(
            parse_suite("stew 1\n"),
            Err(HarnessError::InvalidSuite { line: 1, .. })
        ));
        assert!(parse_suite("").unwrap().is_empty());
        assert_eq!(builtin_suite("drop10").unwrap().len(), 20);
    }
}
