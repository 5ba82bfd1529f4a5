//! Verification and repair of temporally inconsistent edited video, operating on per-frame
//! feature streams.
//!
//! The pipeline scores every pair of consecutive frames with four perceptual metrics against
//! learned thresholds, bounds per-dimension drift of masked embeddings, checks a finite-trace
//! temporal specification against a probabilistic chain over the frames, and repairs each
//! maximal run of inconsistent transitions by interpolating between its anchor frames. It
//! repeats until no transition is flagged.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! double precision types used by the CLI and file formats.

pub mod drift;
pub mod engine;
pub mod feature;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod repair;
pub mod scalar;
pub mod temporal;
pub mod threshold;

mod error;

pub use error::Error;
pub use scalar::Scalar;

pub type Frame = feature::FrameRecord<f64>;
pub type Frame32 = feature::FrameRecord<f32>;
pub type Transition = feature::TransitionFeatures<f64>;
pub type Thresholds = threshold::ThresholdVector<f64>;
pub type Thresholds32 = threshold::ThresholdVector<f32>;
pub type Tolerances = drift::DriftTolerances<f64>;
pub type Report = engine::VerificationReport<f64>;
pub type Video = Vec<Frame>;
