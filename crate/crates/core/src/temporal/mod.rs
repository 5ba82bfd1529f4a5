//! Temporal fidelity: finite-trace temporal specifications checked against a probabilistic
//! chain built from the video.

mod automaton;
mod formula;
mod monitor;

use thiserror::Error;

pub use automaton::{
    build_automaton, satisfaction_probability, ChainState, SatisfactionResult, VideoAutomaton,
    DEFAULT_PROP_THRESHOLD,
};
pub use formula::{parse_spec, Formula};
pub use monitor::{spec_to_monitor, Monitor, Valuation, DEFAULT_STATE_CAP, MAX_ALPHABET};

use crate::feature::FrameRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemporalError {
    #[error("syntax error at offset {offset}: found {found}, expected one of {}", expected.join(", "))]
    Syntax {
        offset: usize,
        found: String,
        expected: Vec<String>,
    },
    #[error("unknown operator `{found}` at offset {offset}")]
    UnknownOperator { offset: usize, found: char },
    #[error("unknown proposition `{name}`{}", frame.map(|f| format!(" in frame {f}")).unwrap_or_default())]
    UnknownProposition { name: String, frame: Option<usize> },
    #[error("monitor for `{spec}` exceeds the state cap of {cap}")]
    StateCapExceeded { cap: usize, spec: String },
    #[error("alphabet of {size} propositions exceeds the maximum of {max}")]
    AlphabetTooLarge { size: usize, max: usize },
    #[error("automaton alphabet {automaton:?} does not match monitor alphabet {monitor:?}")]
    AlphabetMismatch {
        automaton: Vec<String>,
        monitor: Vec<String>,
    },
    #[error("expected {expected} transition probabilities, got {got}")]
    WrongProbabilityCount { expected: usize, got: usize },
    #[error("transition {transition} has probability {value} outside [0, 1]")]
    BadProbability { transition: usize, value: f64 },
    #[error("video has no frames")]
    EmptyVideo,
}

/// A specification with the thresholds used to check it.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCheck {
    pub spec: Formula,
    pub sat_threshold: f64,
    pub prop_threshold: f64,
    pub state_cap: usize,
}

impl TemporalCheck {
    pub fn new(spec: Formula, sat_threshold: f64, prop_threshold: f64) -> Self {
        Self {
            spec,
            sat_threshold,
            prop_threshold,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    pub fn alphabet(&self) -> Vec<String> {
        self.spec.atoms().into_iter().collect()
    }

    /// Builds the chain and monitor, then judges the satisfaction probability.
    pub fn evaluate<S: Scalar>(
        &self,
        video: &[FrameRecord<S>],
        transition_probs: Vec<S>,
    ) -> Result<SatisfactionResult<S>, TemporalError> {
        let alphabet = self.alphabet();
        let monitor = spec_to_monitor(&self.spec, &alphabet, self.state_cap)?;
        let aut = build_automaton(video, &alphabet, S::lit(self.prop_threshold), transition_probs)?;
        Ok(satisfaction_probability(&aut, &monitor)?.judged(S::lit(self.sat_threshold)))
    }
}
