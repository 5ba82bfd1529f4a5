//! The closed verification and repair loop.

use serde::{Deserialize, Serialize};

use crate::drift::DriftTolerances;
use crate::engine::{evaluate_video, VerificationReport};
use crate::error::Error;
use crate::feature::FrameRecord;
use crate::repair::{execute_repairs, plan_repairs, Interpolator, RepairError, RepairPlan};
use crate::scalar::Scalar;
use crate::temporal::TemporalCheck;
use crate::threshold::ThresholdVector;

pub const DEFAULT_MAX_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<S: Scalar = f64> {
    pub thresholds: ThresholdVector<S>,
    pub tolerances: DriftTolerances<S>,
    pub temporal: Option<TemporalCheck>,
    /// Upper bound on repair passes.
    pub max_iterations: usize,
}

impl<S: Scalar> PipelineConfig<S> {
    pub fn new(thresholds: ThresholdVector<S>, tolerances: DriftTolerances<S>) -> Self {
        Self {
            thresholds,
            tolerances,
            temporal: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_temporal(mut self, check: TemporalCheck) -> Self {
        self.temporal = Some(check);
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn evaluate(&self, video: &[FrameRecord<S>]) -> Result<VerificationReport<S>, Error> {
        Ok(evaluate_video(
            video,
            &self.thresholds,
            &self.tolerances,
            self.temporal.as_ref(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopStatus {
    Converged,
    MaxIterations,
    /// A run had no consistent frame on either side.
    NoAnchors,
}

impl LoopStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            LoopStatus::Converged => 0,
            LoopStatus::MaxIterations => 2,
            LoopStatus::NoAnchors => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResult<S: Scalar = f64> {
    pub video: Vec<FrameRecord<S>>,
    /// One report per verification; `reports[i].iteration == i`.
    pub reports: Vec<VerificationReport<S>>,
    pub plans: Vec<RepairPlan>,
    pub status: LoopStatus,
}

impl<S: Scalar> LoopResult<S> {
    pub fn final_report(&self) -> &VerificationReport<S> {
        self.reports.last().expect("at least one verification")
    }

    pub fn repair_passes(&self) -> usize {
        self.plans.len()
    }
}

/// Verifies, repairs every run against the anchors found in that verification, and verifies
/// again, until nothing is flagged or `max_iterations` repair passes have run.
pub fn run_loop<S: Scalar>(
    video: Vec<FrameRecord<S>>,
    cfg: &PipelineConfig<S>,
    interpolator: &dyn Interpolator<S>,
) -> Result<LoopResult<S>, Error> {
    if cfg.max_iterations < 1 {
        return Err(Error::Config("max_iterations must be at least 1".into()));
    }
    let mut video = video;
    let mut reports = vec![cfg.evaluate(&video)?];
    let mut plans = Vec::new();
    let mut status = LoopStatus::MaxIterations;
    for iteration in 1..=cfg.max_iterations + 1 {
        let report = reports.last().expect("at least one verification");
        if report.is_consistent() {
            status = LoopStatus::Converged;
            break;
        }
        if iteration > cfg.max_iterations {
            break;
        }
        let plan = match plan_repairs(report, video.len()) {
            Ok(plan) => plan,
            Err(RepairError::NoAnchors) => {
                status = LoopStatus::NoAnchors;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        log::info!(
            "iteration {iteration}: {} inconsistent transitions in {} runs",
            report.inconsistent.len(),
            plan.actions.len()
        );
        video = execute_repairs(&video, &plan.actions, interpolator)
            .map_err(|source| Error::RepairPass { iteration, source })?;
        plans.push(plan);
        let mut next = cfg.evaluate(&video)?;
        next.iteration = iteration;
        reports.push(next);
    }
    Ok(LoopResult {
        video,
        reports,
        plans,
        status,
    })
}
