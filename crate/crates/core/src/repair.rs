//! Repair planning and execution for runs of inconsistent transitions.
//!
//! A run `[s, e]` of flagged transitions replaces frames `s..=e`, interpolating between the
//! anchor frames `s - 1` and `e + 1`. A frame qualifies as an anchor only if it touches at
//! least one consistent transition. Runs at the ends of the video lack one anchor and are
//! filled by replicating the other; a run that reaches the last transition also replaces the
//! final frame, which has no consistent neighbour.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{InconsistentRun, VerificationReport};
use crate::feature::{FeatureError, FrameRecord};
use crate::scalar::{l2_norm, Scalar};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("no valid anchor frames exist: every transition is inconsistent")]
    NoAnchors,
    #[error("interpolation depth needs k >= 1, got {0}")]
    BadRunLength(u64),
    #[error("report covers {transitions} transitions but the video has {frames} frames")]
    ReportMismatch { transitions: usize, frames: usize },
    #[error("action for frames {first}..={last} is out of bounds for {frames} frames")]
    ActionOutOfBounds { first: usize, last: usize, frames: usize },
    #[error("interpolator returned {got} frames, expected {expected}")]
    WrongCount { expected: usize, got: usize },
    #[error("interpolator returned frame index {got}, expected {expected}")]
    WrongIndex { expected: usize, got: usize },
    #[error("interpolator returned an invalid frame: {0}")]
    InvalidFrame(#[from] FeatureError),
    #[error("clip embedding blend between frames {prev} and {next} has zero norm")]
    ZeroNormBlend { prev: usize, next: usize },
    #[error("interpolator process `{command}` failed: {reason}")]
    Process { command: String, reason: String },
    #[error("interpolator protocol violation: {0}")]
    Protocol(String),
}

/// `ceil(log2(k + 1))`, the bit length of `k`.
pub fn interpolation_depth(k: u64) -> Result<u32, RepairError> {
    if k < 1 {
        return Err(RepairError::BadRunLength(k));
    }
    Ok(u64::BITS - k.leading_zeros())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Interpolate,
    ReplicateNearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAction {
    pub run: InconsistentRun,
    pub anchor_prev: Option<usize>,
    pub anchor_next: Option<usize>,
    pub depth: u32,
    pub strategy: Strategy,
    /// First and last frame replaced by this action.
    pub first_frame: usize,
    pub last_frame: usize,
}

impl RepairAction {
    pub fn frame_count(&self) -> usize {
        self.last_frame - self.first_frame + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub actions: Vec<RepairAction>,
    /// Every run received both anchors.
    pub anchor_property: bool,
}

pub fn plan_runs(runs: &[InconsistentRun], num_frames: usize) -> Result<RepairPlan, RepairError> {
    let last_transition = num_frames.saturating_sub(2);
    let mut actions = Vec::with_capacity(runs.len());
    for &run in runs {
        if run.end > last_transition || num_frames < 2 {
            return Err(RepairError::ActionOutOfBounds {
                first: run.start,
                last: run.end,
                frames: num_frames,
            });
        }
        let anchor_prev = run.start.checked_sub(1);
        let anchor_next = (run.end < last_transition).then_some(run.end + 1);
        let strategy = match (anchor_prev, anchor_next) {
            (Some(_), Some(_)) => Strategy::Interpolate,
            (None, None) => return Err(RepairError::NoAnchors),
            _ => Strategy::ReplicateNearest,
        };
        actions.push(RepairAction {
            run,
            anchor_prev,
            anchor_next,
            depth: interpolation_depth(run.k as u64)?,
            strategy,
            first_frame: run.start,
            last_frame: if anchor_next.is_some() { run.end } else { num_frames - 1 },
        });
    }
    let anchor_property = actions.iter().all(|a| a.strategy == Strategy::Interpolate);
    Ok(RepairPlan { actions, anchor_property })
}

pub fn plan_repairs<S: Scalar>(report: &VerificationReport<S>, num_frames: usize) -> Result<RepairPlan, RepairError> {
    if report.verdicts.len() + 1 != num_frames {
        return Err(RepairError::ReportMismatch {
            transitions: report.verdicts.len(),
            frames: num_frames,
        });
    }
    plan_runs(&report.runs, num_frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    FeatureSpace,
    PixelSpace,
}

/// Request sent to an interpolator; the wire form of the external protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct InterpolationRequest<S: Scalar = f64> {
    pub anchor_prev: FrameRecord<S>,
    pub anchor_next: FrameRecord<S>,
    pub count: usize,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct InterpolationResponse<S: Scalar = f64> {
    pub frames: Vec<FrameRecord<S>>,
}

/// Produces `count` frames strictly between two anchors, indexed consecutively after
/// `anchor_prev`.
pub trait Interpolator<S: Scalar> {
    fn capability(&self) -> Capability;

    fn interpolate(&self, request: &InterpolationRequest<S>) -> Result<Vec<FrameRecord<S>>, RepairError>;
}

fn lerp<S: Scalar>(a: &[S], b: &[S], t: S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| (S::one() - t) * x + t * y).collect()
}

/// Feature-space stand-in for a neural frame interpolator: linear blends at `t = m / (k + 1)`.
///
/// The clip embedding is renormalized and the histogram rescaled to sum to one; masks are
/// copied from the nearer anchor (`t <= 0.5` takes the previous one).
pub fn builtin_interpolate<S: Scalar>(
    anchor_a: &FrameRecord<S>,
    anchor_b: &FrameRecord<S>,
    k: usize,
) -> Result<Vec<FrameRecord<S>>, RepairError> {
    let half = S::lit(0.5);
    let denom = S::from_usize_lossy(k + 1);
    (1..=k)
        .map(|m| {
            let t = S::from_usize_lossy(m) / denom;
            let mut clip = lerp(&anchor_a.clip_embedding, &anchor_b.clip_embedding, t);
            let norm = l2_norm(&clip);
            if !(norm > S::epsilon()) {
                return Err(RepairError::ZeroNormBlend {
                    prev: anchor_a.frame_index,
                    next: anchor_b.frame_index,
                });
            }
            clip.iter_mut().for_each(|x| *x = *x / norm);
            let mut histogram = lerp(&anchor_a.histogram, &anchor_b.histogram, t);
            let total: S = histogram.iter().copied().sum();
            if total > S::zero() {
                histogram.iter_mut().for_each(|x| *x = *x / total);
            }
            let mut props = BTreeMap::new();
            for (name, &ca) in &anchor_a.prop_confidences {
                let c = match anchor_b.prop_confidences.get(name) {
                    Some(&cb) => (S::one() - t) * ca + t * cb,
                    None => ca,
                };
                props.insert(name.clone(), c.max(S::zero()).min(S::one()));
            }
            for (name, &cb) in &anchor_b.prop_confidences {
                props.entry(name.clone()).or_insert(cb);
            }
            Ok(FrameRecord {
                frame_index: anchor_a.frame_index + m,
                clip_embedding: clip,
                fg_embedding: lerp(&anchor_a.fg_embedding, &anchor_b.fg_embedding, t),
                bg_embedding: lerp(&anchor_a.bg_embedding, &anchor_b.bg_embedding, t),
                lpips_features: lerp(&anchor_a.lpips_features, &anchor_b.lpips_features, t),
                histogram,
                mask: if t <= half {
                    anchor_a.mask.clone()
                } else {
                    anchor_b.mask.clone()
                },
                prop_confidences: props,
                image_path: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinInterpolator;

impl<S: Scalar> Interpolator<S> for BuiltinInterpolator {
    fn capability(&self) -> Capability {
        Capability::FeatureSpace
    }

    fn interpolate(&self, request: &InterpolationRequest<S>) -> Result<Vec<FrameRecord<S>>, RepairError> {
        builtin_interpolate(&request.anchor_prev, &request.anchor_next, request.count)
    }
}

/// External interpolator speaking JSON over stdin/stdout, run through `sh -c`.
#[derive(Debug, Clone)]
pub struct ExecInterpolator {
    pub command: String,
}

impl ExecInterpolator {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
        }
    }

    fn process_error(&self, reason: impl Into<String>) -> RepairError {
        RepairError::Process {
            command: self.command.clone(),
            reason: reason.into(),
        }
    }
}

impl<S: Scalar> Interpolator<S> for ExecInterpolator {
    fn capability(&self) -> Capability {
        Capability::PixelSpace
    }

    fn interpolate(&self, request: &InterpolationRequest<S>) -> Result<Vec<FrameRecord<S>>, RepairError> {
        let payload = serde_json::to_vec(request).map_err(|e| RepairError::Protocol(e.to_string()))?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.process_error(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // a child that exits without reading shows up as a broken pipe; its status decides
            let _ = stdin.write_all(&payload);
        }
        let output = child
            .wait_with_output()
            .map_err(|e| self.process_error(e.to_string()))?;
        if !output.status.success() {
            return Err(self.process_error(format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let response: InterpolationResponse<S> = serde_json::from_slice(&output.stdout)
            .map_err(|e| RepairError::Protocol(format!("malformed response: {e}")))?;
        Ok(response.frames)
    }
}

/// Applies a plan against the video as it was when the plan was made. Frames outside the
/// actions are left untouched.
pub fn execute_repairs<S: Scalar>(
    video: &[FrameRecord<S>],
    actions: &[RepairAction],
    interpolator: &dyn Interpolator<S>,
) -> Result<Vec<FrameRecord<S>>, RepairError> {
    let mut out = video.to_vec();
    for action in actions {
        if action.last_frame >= video.len() || action.first_frame > action.last_frame {
            return Err(RepairError::ActionOutOfBounds {
                first: action.first_frame,
                last: action.last_frame,
                frames: video.len(),
            });
        }
        let count = action.frame_count();
        let frames = match (action.strategy, action.anchor_prev, action.anchor_next) {
            (Strategy::Interpolate, Some(p), Some(n)) => {
                if p + 1 != action.first_frame || n != action.last_frame + 1 {
                    return Err(RepairError::ActionOutOfBounds {
                        first: p,
                        last: n,
                        frames: video.len(),
                    });
                }
                let request = InterpolationRequest {
                    anchor_prev: video[p].clone(),
                    anchor_next: video[n].clone(),
                    count,
                    depth: action.depth,
                };
                let frames = interpolator.interpolate(&request)?;
                if frames.len() != count {
                    return Err(RepairError::WrongCount {
                        expected: count,
                        got: frames.len(),
                    });
                }
                frames
            }
            (_, prev, next) => {
                let anchor = next.or(prev).ok_or(RepairError::NoAnchors)?;
                let source = video.get(anchor).ok_or(RepairError::ActionOutOfBounds {
                    first: anchor,
                    last: anchor,
                    frames: video.len(),
                })?;
                (action.first_frame..=action.last_frame)
                    .map(|i| FrameRecord {
                        frame_index: i,
                        ..source.clone()
                    })
                    .collect()
            }
        };
        for (offset, frame) in frames.into_iter().enumerate() {
            let expected = action.first_frame + offset;
            if frame.frame_index != expected {
                return Err(RepairError::WrongIndex {
                    expected,
                    got: frame.frame_index,
                });
            }
            frame.validate()?;
            out[expected] = frame;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::BinaryMask;

    #[test]
    fn depth_examples() {
        assert_eq!(interpolation_depth(1).unwrap(), 1);
        assert_eq!(interpolation_depth(3).unwrap(), 2);
        assert_eq!(interpolation_depth(7).unwrap(), 3);
        assert_eq!(interpolation_depth(8).unwrap(), 4);
        assert!(matches!(interpolation_depth(0), Err(RepairError::BadRunLength(0))));
    }

    #[test]
    fn interior_run_gets_both_anchors() {
        let plan = plan_runs(&[InconsistentRun::new(2, 4)], 10).unwrap();
        let a = plan.actions[0];
        assert_eq!((a.anchor_prev, a.anchor_next, a.depth), (Some(1), Some(5), 2));
        assert_eq!(a.strategy, Strategy::Interpolate);
        assert_eq!((a.first_frame, a.last_frame), (2, 4));
        assert!(plan.anchor_property);
    }

    #[test]
    fn head_run_replicates() {
        let plan = plan_runs(&[InconsistentRun::new(0, 1)], 10).unwrap();
        let a = plan.actions[0];
        assert_eq!((a.anchor_prev, a.anchor_next), (None, Some(2)));
        assert_eq!(a.strategy, Strategy::ReplicateNearest);
        assert!(!plan.anchor_property);
    }

    #[test]
    fn tail_run_includes_last_frame() {
        let plan = plan_runs(&[InconsistentRun::new(7, 8)], 10).unwrap();
        let a = plan.actions[0];
        assert_eq!((a.anchor_prev, a.anchor_next), (Some(6), None));
        assert_eq!((a.first_frame, a.last_frame), (7, 9));
    }

    #[test]
    fn two_runs() {
        let plan = plan_runs(&[InconsistentRun::new(2, 4), InconsistentRun::new(7, 7)], 10).unwrap();
        assert_eq!(plan.actions.len(), 2);
        assert_eq!(plan.actions[1].anchor_prev, Some(6));
        assert_eq!(plan.actions[1].anchor_next, Some(8));
        assert_eq!(plan.actions[1].depth, 1);
        assert!(plan.anchor_property);
    }

    #[test]
    fn everything_flagged_has_no_anchors() {
        assert!(matches!(
            plan_runs(&[InconsistentRun::new(0, 8)], 10),
            Err(RepairError::NoAnchors)
        ));
    }

    fn frame(i: usize, clip: Vec<f64>, hist: Vec<f64>) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            clip_embedding: clip,
            fg_embedding: vec![i as f64],
            bg_embedding: vec![0.0],
            lpips_features: vec![2.0 * i as f64],
            histogram: hist,
            mask: BinaryMask::empty(1, 2),
            prop_confidences: [("a".into(), 1.0)].into_iter().collect(),
            image_path: None,
        }
    }

    #[test]
    fn equal_anchors_reproduce_themselves() {
        let a = frame(0, vec![0.6, 0.8], vec![0.5, 0.5]);
        let mut b = a.clone();
        b.frame_index = 4;
        let out = builtin_interpolate(&a, &b, 3).unwrap();
        for (m, f) in out.iter().enumerate() {
            assert_eq!(f.frame_index, m + 1);
            for (x, y) in f.clip_embedding.iter().zip(&a.clip_embedding) {
                assert!((x - y).abs() < 1e-15);
            }
            assert_eq!(f.histogram, a.histogram);
        }
    }

    #[test]
    fn histogram_midpoint() {
        let a = frame(0, vec![1.0, 0.0], vec![1.0, 0.0]);
        let b = frame(2, vec![1.0, 0.0], vec![0.0, 1.0]);
        let out = builtin_interpolate(&a, &b, 1).unwrap();
        assert_eq!(out[0].histogram, vec![0.5, 0.5]);
        assert_eq!(out[0].fg_embedding, vec![1.0]);
    }

    #[test]
    fn antiparallel_blend_fails() {
        let a = frame(0, vec![1.0, 0.0], vec![1.0, 0.0]);
        let b = frame(2, vec![-1.0, 0.0], vec![1.0, 0.0]);
        assert!(matches!(
            builtin_interpolate(&a, &b, 1),
            Err(RepairError::ZeroNormBlend { prev: 0, next: 2 })
        ));
    }
}
