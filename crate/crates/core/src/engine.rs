//! Joint per-transition consistency verdicts and the inconsistent set.
//!
//! A transition `i` (frames `i`, `i + 1`) is consistent when all four metric thresholds hold,
//! the drift bounds hold, and the temporal check does not blame it.
//!
//! The temporal check is video level. When it fails, blame is localized so that repair has
//! something to act on:
//! - the label trace hits a dead monitor state at frame `v`: transitions `v - 1` and `v`;
//! - the trace is rejected only at its end: the final transition;
//! - the trace is accepted but the probability is below threshold: nothing extra if some
//!   transition is already inconsistent (repairing it raises the probability), otherwise the
//!   transition with the lowest metric probability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{check_drift, DriftError, DriftTolerances, DriftVerdict};
use crate::feature::{FrameRecord, TransitionFeatures};
use crate::metrics::{transition_features, MetricError};
use crate::scalar::Scalar;
use crate::temporal::{SatisfactionResult, TemporalCheck, TemporalError};
use crate::threshold::{classify, metric_probabilities, MetricFlags, ThresholdVector};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transition {transition}: {source}")]
    Metric {
        transition: usize,
        #[source]
        source: MetricError,
    },
    #[error("transition {transition}: {source}")]
    Drift {
        transition: usize,
        #[source]
        source: DriftError,
    },
    #[error("temporal check: {0}")]
    Temporal(#[from] TemporalError),
    #[error("need at least 2 frames, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConsistencyVerdict<S: Scalar = f64> {
    pub transition: usize,
    pub features: TransitionFeatures<S>,
    pub flags: MetricFlags,
    pub metric_probabilities: [S; 4],
    /// Product of the four metric probabilities.
    pub p_metric: S,
    pub drift: DriftVerdict<S>,
    pub temporal_pass: bool,
    pub consistent: bool,
}

impl<S: Scalar> ConsistencyVerdict<S> {
    fn recompute(&mut self) {
        self.consistent = self.flags.all() && self.drift.satisfied && self.temporal_pass;
    }
}

/// Maximal run of inconsistent transitions, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistentRun {
    pub start: usize,
    pub end: usize,
    pub k: usize,
}

impl InconsistentRun {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "run start {start} after end {end}");
        Self {
            start,
            end,
            k: end - start + 1,
        }
    }
}

/// Percentage of transitions flagged by each individual check.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlagRates {
    pub iou: f64,
    pub smt: f64,
    pub lpips: f64,
    pub hist: f64,
    pub clip: f64,
    pub temporal: f64,
}

/// The six individual checks behind a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Iou,
    Smt,
    Lpips,
    Hist,
    Clip,
    Temporal,
}

impl Check {
    pub const ALL: [Check; 6] = [Check::Iou, Check::Smt, Check::Lpips, Check::Hist, Check::Clip, Check::Temporal];

    pub fn fails<S: Scalar>(self, v: &ConsistencyVerdict<S>) -> bool {
        match self {
            Check::Iou => !v.flags.iou,
            Check::Smt => !v.drift.satisfied,
            Check::Lpips => !v.flags.lpips,
            Check::Hist => !v.flags.hist,
            Check::Clip => !v.flags.cos,
            Check::Temporal => !v.temporal_pass,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::Iou => "iou",
            Check::Smt => "smt",
            Check::Lpips => "lpips",
            Check::Hist => "hist",
            Check::Clip => "clip",
            Check::Temporal => "temporal",
        }
    }
}

impl FlagRates {
    pub fn from_verdicts<S: Scalar>(verdicts: &[ConsistencyVerdict<S>]) -> Self {
        let rate = |check: Check| {
            if verdicts.is_empty() {
                return 0.0;
            }
            let n = verdicts.iter().filter(|v| check.fails(v)).count();
            100.0 * n as f64 / verdicts.len() as f64
        };
        Self {
            iou: rate(Check::Iou),
            smt: rate(Check::Smt),
            lpips: rate(Check::Lpips),
            hist: rate(Check::Hist),
            clip: rate(Check::Clip),
            temporal: rate(Check::Temporal),
        }
    }

    pub fn get(&self, check: Check) -> f64 {
        match check {
            Check::Iou => self.iou,
            Check::Smt => self.smt,
            Check::Lpips => self.lpips,
            Check::Hist => self.hist,
            Check::Clip => self.clip,
            Check::Temporal => self.temporal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct VerificationReport<S: Scalar = f64> {
    pub iteration: usize,
    pub verdicts: Vec<ConsistencyVerdict<S>>,
    pub inconsistent: Vec<usize>,
    pub runs: Vec<InconsistentRun>,
    pub flag_rates: FlagRates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<SatisfactionResult<S>>,
}

impl<S: Scalar> VerificationReport<S> {
    pub fn num_frames(&self) -> usize {
        self.verdicts.len() + 1
    }

    pub fn is_consistent(&self) -> bool {
        self.inconsistent.is_empty()
    }

    /// Rebuilds the inconsistent set, runs and flag rates from the verdicts.
    fn from_verdicts(iteration: usize, verdicts: Vec<ConsistencyVerdict<S>>, temporal: Option<SatisfactionResult<S>>) -> Self {
        let inconsistent: Vec<usize> = verdicts
            .iter()
            .filter(|v| !v.consistent)
            .map(|v| v.transition)
            .collect();
        Self {
            iteration,
            runs: contiguous_runs(&inconsistent),
            flag_rates: FlagRates::from_verdicts(&verdicts),
            inconsistent,
            verdicts,
            temporal,
        }
    }
}

/// Maximal runs of consecutive indices. Input must be sorted and free of duplicates.
pub fn contiguous_runs(indices: &[usize]) -> Vec<InconsistentRun> {
    debug_assert!(indices.windows(2).all(|w| w[0] < w[1]), "indices must be sorted and unique");
    let mut runs = Vec::new();
    let mut iter = indices.iter().copied();
    let Some(first) = iter.next() else {
        return runs;
    };
    let (mut start, mut end) = (first, first);
    for i in iter {
        if i == end + 1 {
            end = i;
        } else {
            runs.push(InconsistentRun::new(start, end));
            start = i;
            end = i;
        }
    }
    runs.push(InconsistentRun::new(start, end));
    runs
}

/// Metric and drift verdict for transition `i`; the temporal part is filled in at video level.
pub fn evaluate_transition<S: Scalar>(
    video: &[FrameRecord<S>],
    i: usize,
    thresholds: &ThresholdVector<S>,
    tolerances: &DriftTolerances<S>,
) -> Result<ConsistencyVerdict<S>, EngineError> {
    let (fi, fj) = (&video[i], &video[i + 1]);
    let features = transition_features(fi, fj).map_err(|source| EngineError::Metric { transition: i, source })?;
    let drift = check_drift(fi, fj, tolerances).map_err(|source| EngineError::Drift { transition: i, source })?;
    let probs = metric_probabilities(&features, thresholds);
    let mut v = ConsistencyVerdict {
        transition: i,
        features,
        flags: classify(&features, thresholds),
        metric_probabilities: probs,
        p_metric: probs.iter().fold(S::one(), |acc, &p| acc * p),
        drift,
        temporal_pass: true,
        consistent: false,
    };
    v.recompute();
    Ok(v)
}

fn temporal_blame<S: Scalar>(result: &SatisfactionResult<S>, verdicts: &[ConsistencyVerdict<S>]) -> Vec<usize> {
    if result.passes {
        return Vec::new();
    }
    let last = verdicts.len() - 1;
    if let Some(v) = result.earliest_violation {
        let lo = v.saturating_sub(1).min(last);
        let hi = v.min(last);
        return (lo..=hi).collect();
    }
    if !result.trace_accepted {
        return vec![last];
    }
    if verdicts.iter().any(|v| !v.consistent) {
        return Vec::new();
    }
    let weakest = verdicts
        .iter()
        .min_by(|a, b| a.p_metric.partial_cmp(&b.p_metric).expect("finite probabilities"))
        .map(|v| v.transition)
        .expect("at least one transition");
    vec![weakest]
}

pub fn evaluate_video<S: Scalar>(
    video: &[FrameRecord<S>],
    thresholds: &ThresholdVector<S>,
    tolerances: &DriftTolerances<S>,
    temporal: Option<&TemporalCheck>,
) -> Result<VerificationReport<S>, EngineError> {
    if video.len() < 2 {
        return Err(EngineError::TooShort(video.len()));
    }
    let mut verdicts = (0..video.len() - 1)
        .map(|i| evaluate_transition(video, i, thresholds, tolerances))
        .collect::<Result<Vec<_>, _>>()?;
    let satisfaction = match temporal {
        Some(check) => {
            let probs = verdicts.iter().map(|v| v.p_metric).collect();
            let result = check.evaluate(video, probs)?;
            for i in temporal_blame(&result, &verdicts) {
                verdicts[i].temporal_pass = false;
                verdicts[i].recompute();
            }
            Some(result)
        }
        None => None,
    };
    Ok(VerificationReport::from_verdicts(0, verdicts, satisfaction))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_examples() {
        assert_eq!(
            contiguous_runs(&[2, 3, 4, 7]),
            vec![InconsistentRun::new(2, 4), InconsistentRun::new(7, 7)]
        );
        assert_eq!(contiguous_runs(&[2, 3, 4, 7])[0].k, 3);
        assert!(contiguous_runs(&[]).is_empty());
        let all: Vec<usize> = (0..9).collect();
        assert_eq!(contiguous_runs(&all), vec![InconsistentRun { start: 0, end: 8, k: 9 }]);
    }

    #[test]
    fn run_json_field_names() {
        let v = serde_json::to_value(InconsistentRun::new(3, 5)).unwrap();
        assert_eq!(v, serde_json::json!({"start": 3, "end": 5, "k": 3}));
    }

    #[test]
    fn flag_rate_json_keys() {
        let v = serde_json::to_value(FlagRates::default()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["clip", "hist", "iou", "lpips", "smt", "temporal"]);
    }
}
