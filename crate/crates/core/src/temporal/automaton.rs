//! Chain-shaped video automaton and exact satisfaction probability.
//!
//! States are the frames `0..T` plus an absorbing FAIL state. Frame `i` moves to `i + 1` with
//! probability `p_i` and to FAIL otherwise; the last frame is absorbing. A run satisfies the
//! specification when it reaches the last frame and the monitor accepts the label trace.

use serde::{Deserialize, Serialize};

use super::monitor::{Monitor, Valuation, MAX_ALPHABET};
use super::TemporalError;
use crate::feature::FrameRecord;
use crate::scalar::Scalar;

pub const DEFAULT_PROP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAutomaton<S: Scalar = f64> {
    alphabet: Vec<String>,
    labels: Vec<Valuation>,
    transition_probs: Vec<S>,
}

/// Where a state's outgoing probability mass goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainState {
    Frame(usize),
    Fail,
}

impl<S: Scalar> VideoAutomaton<S> {
    /// Assembles an automaton from precomputed labels. `alphabet` must be sorted and unique.
    pub fn from_labels(
        alphabet: Vec<String>,
        labels: Vec<Valuation>,
        transition_probs: Vec<S>,
    ) -> Result<Self, TemporalError> {
        if labels.is_empty() {
            return Err(TemporalError::EmptyVideo);
        }
        if transition_probs.len() != labels.len() - 1 {
            return Err(TemporalError::WrongProbabilityCount {
                expected: labels.len() - 1,
                got: transition_probs.len(),
            });
        }
        if let Some((i, p)) = transition_probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p >= S::zero() && **p <= S::one()))
        {
            return Err(TemporalError::BadProbability {
                transition: i,
                value: p.to_f64_exact(),
            });
        }
        Ok(Self {
            alphabet,
            labels,
            transition_probs,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn labels(&self) -> &[Valuation] {
        &self.labels
    }

    pub fn transition_probs(&self) -> &[S] {
        &self.transition_probs
    }

    pub fn label_holds(&self, frame: usize, prop: &str) -> bool {
        self.alphabet
            .iter()
            .position(|a| a == prop)
            .is_some_and(|i| self.labels[frame] >> i & 1 == 1)
    }

    pub fn outgoing(&self, state: ChainState) -> Vec<(ChainState, S)> {
        match state {
            ChainState::Fail => vec![(ChainState::Fail, S::one())],
            ChainState::Frame(i) if i + 1 == self.num_frames() => vec![(ChainState::Frame(i), S::one())],
            ChainState::Frame(i) => {
                let p = self.transition_probs[i];
                vec![(ChainState::Frame(i + 1), p), (ChainState::Fail, S::one() - p)]
            }
        }
    }
}

/// Labels each frame by thresholding proposition confidences (inclusive).
pub fn build_automaton<S: Scalar>(
    video: &[FrameRecord<S>],
    alphabet: &[String],
    prop_threshold: S,
    transition_probs: Vec<S>,
) -> Result<VideoAutomaton<S>, TemporalError> {
    let mut alphabet = alphabet.to_vec();
    alphabet.sort();
    alphabet.dedup();
    if alphabet.len() > MAX_ALPHABET {
        return Err(TemporalError::AlphabetTooLarge {
            size: alphabet.len(),
            max: MAX_ALPHABET,
        });
    }
    let mut labels = Vec::with_capacity(video.len());
    for f in video {
        let mut v: Valuation = 0;
        for (i, name) in alphabet.iter().enumerate() {
            let c = f
                .prop_confidences
                .get(name)
                .ok_or_else(|| TemporalError::UnknownProposition {
                    name: name.clone(),
                    frame: Some(f.frame_index),
                })?;
            if *c >= prop_threshold {
                v |= 1 << i;
            }
        }
        labels.push(v);
    }
    VideoAutomaton::from_labels(alphabet, labels, transition_probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SatisfactionResult<S: Scalar = f64> {
    pub psi: S,
    pub passes: bool,
    pub sat_threshold: S,
    pub earliest_violation: Option<usize>,
    /// Whether the monitor accepts the label trace itself.
    pub trace_accepted: bool,
}

impl<S: Scalar> SatisfactionResult<S> {
    pub fn judged(mut self, sat_threshold: S) -> Self {
        self.sat_threshold = sat_threshold;
        self.passes = self.psi >= sat_threshold;
        self
    }
}

/// Exact satisfaction probability by backward induction over (frame, monitor state).
///
/// `value[q]` at frame `i` is the probability of success from frame `i` given the monitor is in
/// state `q` after reading label `i`. At the last frame it is 1 for accepting states; earlier,
/// `p_i` times the value of the successor state at frame `i + 1`. FAIL contributes nothing.
pub fn satisfaction_probability<S: Scalar>(
    aut: &VideoAutomaton<S>,
    monitor: &Monitor,
) -> Result<SatisfactionResult<S>, TemporalError> {
    if aut.alphabet() != monitor.alphabet() {
        return Err(TemporalError::AlphabetMismatch {
            automaton: aut.alphabet().to_vec(),
            monitor: monitor.alphabet().to_vec(),
        });
    }
    let n = monitor.num_states();
    let labels = aut.labels();
    let last = labels.len() - 1;
    let mut value: Vec<S> = (0..n)
        .map(|q| if monitor.is_accepting(q) { S::one() } else { S::zero() })
        .collect();
    for i in (0..last).rev() {
        let p = aut.transition_probs()[i];
        let next_label = labels[i + 1];
        value = (0..n).map(|q| p * value[monitor.step(q, next_label)]).collect();
    }
    let start = monitor.step(Monitor::INITIAL, labels[0]);
    Ok(SatisfactionResult {
        psi: value[start],
        passes: false,
        sat_threshold: S::zero(),
        earliest_violation: monitor.earliest_violation(labels),
        trace_accepted: monitor.accepts(labels),
    })
}
