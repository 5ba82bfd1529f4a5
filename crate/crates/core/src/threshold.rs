//! Learned per-metric thresholds.
//!
//! Each metric gets a soft pass probability `P_k = sigmoid(lambda * (s_k - tau_k))`. The four
//! thresholds are fitted jointly by minimizing binary cross-entropy over a positive set of
//! consistent transitions and a negative set of inconsistent ones, using full-batch Adam.
//!
//! With `N = |P| + |N|` and labels `y_i`, the loss for metric `k` is
//!
//! ```text
//! L_k = -(1/N) sum_i [ y_i ln P_k(i) + (1 - y_i) ln(1 - P_k(i)) ]
//! ```
//!
//! and since `dP/dtau = -lambda P (1 - P)` the gradient has the closed form
//!
//! ```text
//! dL_k/dtau_k = (lambda/N) sum_i (y_i - P_k(i))
//! ```
//!
//! Terms whose probability sits on the clamp boundary contribute zero, matching the flat
//! clamped loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::{Metric, TransitionFeatures};
use crate::scalar::Scalar;

pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("training set needs at least one positive and one negative (got {positives} and {negatives})")]
    EmptyTrainingSet { positives: usize, negatives: usize },
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid threshold vector: {0}")]
    InvalidThresholds(String),
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

/// Thresholds in the "larger is more consistent" orientation, plus the sigmoid sharpness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "S: Scalar",
    into = "ThresholdFile<S>",
    try_from = "ThresholdFile<S>"
)]
pub struct ThresholdVector<S: Scalar = f64> {
    pub tau_cos: S,
    pub tau_hist: S,
    pub tau_iou: S,
    pub tau_lpips_inverted: S,
    pub lambda: S,
}

/// On-disk form: the perceptual threshold is stored as a distance bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ThresholdFile<S: Scalar> {
    pub tau_cos: S,
    pub tau_hist: S,
    pub tau_iou: S,
    pub tau_lpips: S,
    pub lambda: S,
}

impl<S: Scalar> From<ThresholdVector<S>> for ThresholdFile<S> {
    fn from(t: ThresholdVector<S>) -> Self {
        Self {
            tau_cos: t.tau_cos,
            tau_hist: t.tau_hist,
            tau_iou: t.tau_iou,
            tau_lpips: t.tau_lpips(),
            lambda: t.lambda,
        }
    }
}

impl<S: Scalar> TryFrom<ThresholdFile<S>> for ThresholdVector<S> {
    type Error = ThresholdError;

    fn try_from(f: ThresholdFile<S>) -> Result<Self, Self::Error> {
        Self::from_array([f.tau_cos, f.tau_hist, f.tau_iou, -f.tau_lpips], f.lambda)
    }
}

impl<S: Scalar> ThresholdVector<S> {
    pub fn from_array(tau: [S; 4], lambda: S) -> Result<Self, ThresholdError> {
        if !(lambda > S::zero() && lambda.is_finite()) {
            return Err(ThresholdError::InvalidThresholds(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        if let Some(t) = tau.iter().find(|t| !t.is_finite()) {
            return Err(ThresholdError::InvalidThresholds(format!("non-finite threshold {t}")));
        }
        Ok(Self {
            tau_cos: tau[0],
            tau_hist: tau[1],
            tau_iou: tau[2],
            tau_lpips_inverted: tau[3],
            lambda,
        })
    }

    pub fn as_array(&self) -> [S; 4] {
        [self.tau_cos, self.tau_hist, self.tau_iou, self.tau_lpips_inverted]
    }

    pub fn get(&self, metric: Metric) -> S {
        self.as_array()[metric.index()]
    }

    fn set_array(&mut self, tau: [S; 4]) {
        self.tau_cos = tau[0];
        self.tau_hist = tau[1];
        self.tau_iou = tau[2];
        self.tau_lpips_inverted = tau[3];
    }

    /// Perceptual distance bound: a transition passes when `d_lpips <= tau_lpips`.
    pub fn tau_lpips(&self) -> S {
        -self.tau_lpips_inverted
    }
}

/// Labelled transitions for threshold fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TrainingSet<S: Scalar = f64> {
    pub positives: Vec<TransitionFeatures<S>>,
    pub negatives: Vec<TransitionFeatures<S>>,
}

impl<S: Scalar> TrainingSet<S> {
    pub fn new(
        positives: Vec<TransitionFeatures<S>>,
        negatives: Vec<TransitionFeatures<S>>,
    ) -> Result<Self, ThresholdError> {
        let set = Self { positives, negatives };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<(), ThresholdError> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(ThresholdError::EmptyTrainingSet {
                positives: self.positives.len(),
                negatives: self.negatives.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All examples with their labels, positives first.
    pub fn labelled(&self) -> impl Iterator<Item = (&TransitionFeatures<S>, bool)> {
        self.positives
            .iter()
            .map(|s| (s, true))
            .chain(self.negatives.iter().map(|s| (s, false)))
    }

    /// Per metric, the midpoint between the positive and negative means.
    pub fn midpoint_init(&self) -> [S; 4] {
        let mean = |xs: &[TransitionFeatures<S>], k: usize| {
            xs.iter().map(|s| s.scores()[k]).sum::<S>() / S::from_usize_lossy(xs.len())
        };
        std::array::from_fn(|k| (mean(&self.positives, k) + mean(&self.negatives, k)) / S::lit(2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub max_epochs: usize,
    pub loss_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            max_epochs: 500,
            loss_tolerance: 1e-7,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        let bad = |msg: &str| Err(ThresholdError::InvalidConfig(msg.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon_adam > 0.0) {
            return bad("epsilon_adam must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "S: Scalar")]
pub struct FitResult<S: Scalar = f64> {
    pub thresholds: ThresholdVector<S>,
    pub initial_loss: S,
    pub final_loss: S,
    pub epochs: usize,
    pub loss_trace: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "S: Scalar")]
pub struct BceLoss<S: Scalar = f64> {
    pub per_metric: [S; 4],
    pub total: S,
}

/// Which of the four threshold comparisons a transition passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub cos: bool,
    pub hist: bool,
    pub iou: bool,
    pub lpips: bool,
}

impl MetricFlags {
    pub fn all(&self) -> bool {
        self.cos && self.hist && self.iou && self.lpips
    }

    pub fn get(&self, metric: Metric) -> bool {
        match metric {
            Metric::Cos => self.cos,
            Metric::Hist => self.hist,
            Metric::Iou => self.iou,
            Metric::Lpips => self.lpips,
        }
    }
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Lower clamp for probabilities entering a logarithm (never below the type's epsilon, so that
/// `1 - clamp` stays below one in single precision).
pub fn probability_clamp<S: Scalar>() -> S {
    S::lit(1e-12).max(S::epsilon())
}

pub fn per_metric_probability<S: Scalar>(
    s: &TransitionFeatures<S>,
    tau: &ThresholdVector<S>,
    metric: Metric,
) -> S {
    sigmoid(tau.lambda * (s.score(metric) - tau.get(metric)))
}

pub fn metric_probabilities<S: Scalar>(s: &TransitionFeatures<S>, tau: &ThresholdVector<S>) -> [S; 4] {
    Metric::ALL.map(|m| per_metric_probability(s, tau, m))
}

pub fn bce_loss<S: Scalar>(train: &TrainingSet<S>, tau: &ThresholdVector<S>) -> Result<BceLoss<S>, ThresholdError> {
    train.check()?;
    let lo = probability_clamp::<S>();
    let hi = S::one() - lo;
    let mut per_metric = [S::zero(); 4];
    for (s, positive) in train.labelled() {
        for (k, p) in metric_probabilities(s, tau).into_iter().enumerate() {
            let p = p.max(lo).min(hi);
            per_metric[k] = per_metric[k] - if positive { p.ln() } else { (S::one() - p).ln() };
        }
    }
    let n = S::from_usize_lossy(train.len());
    let per_metric = per_metric.map(|l| l / n);
    Ok(BceLoss {
        per_metric,
        total: per_metric.iter().copied().sum(),
    })
}

/// Analytic `dL/dtau`, see the module docs for the closed form.
pub fn bce_gradient<S: Scalar>(train: &TrainingSet<S>, tau: &ThresholdVector<S>) -> Result<[S; 4], ThresholdError> {
    train.check()?;
    let lo = probability_clamp::<S>();
    let hi = S::one() - lo;
    let mut grad = [S::zero(); 4];
    for (s, positive) in train.labelled() {
        let y = if positive { S::one() } else { S::zero() };
        for (k, p) in metric_probabilities(s, tau).into_iter().enumerate() {
            if p > lo && p < hi {
                grad[k] = grad[k] + (y - p);
            }
        }
    }
    let scale = tau.lambda / S::from_usize_lossy(train.len());
    Ok(grad.map(|g| g * scale))
}

struct Adam<S: Scalar> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    m: [S; 4],
    v: [S; 4],
    t: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(cfg: &FitConfig) -> Self {
        Self {
            lr: S::lit(cfg.learning_rate),
            beta1: S::lit(cfg.beta1),
            beta2: S::lit(cfg.beta2),
            eps: S::lit(cfg.epsilon_adam),
            m: [S::zero(); 4],
            v: [S::zero(); 4],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [S; 4], grad: &[S; 4]) {
        self.t += 1;
        let bc1 = S::one() - self.beta1.powi(self.t);
        let bc2 = S::one() - self.beta2.powi(self.t);
        for k in 0..4 {
            self.m[k] = self.beta1 * self.m[k] + (S::one() - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (S::one() - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] = params[k] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Fits all four thresholds from the midpoint initialization. Returns the lowest-loss iterate,
/// so the reported loss never exceeds the initial loss.
pub fn fit_thresholds<S: Scalar>(train: &TrainingSet<S>, cfg: &FitConfig) -> Result<FitResult<S>, ThresholdError> {
    train.check()?;
    cfg.validate()?;
    let mut tau = ThresholdVector::from_array(train.midpoint_init(), S::lit(cfg.lambda))?;
    let initial_loss = bce_loss(train, &tau)?.total;
    if !initial_loss.is_finite() {
        return Err(ThresholdError::Diverged { epoch: 0 });
    }
    let mut best = (initial_loss, tau);
    let mut prev = initial_loss;
    let mut trace = vec![initial_loss];
    let mut adam = Adam::new(cfg);
    let tolerance = S::lit(cfg.loss_tolerance);
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        let grad = bce_gradient(train, &tau)?;
        let mut params = tau.as_array();
        adam.step(&mut params, &grad);
        tau.set_array(params);
        let loss = bce_loss(train, &tau)?.total;
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(ThresholdError::Diverged { epoch });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, tau);
        }
        if (prev - loss).abs() < tolerance {
            break;
        }
        prev = loss;
    }
    Ok(FitResult {
        thresholds: best.1,
        initial_loss,
        final_loss: best.0,
        epochs,
        loss_trace: trace,
    })
}

/// Hard threshold comparisons; equality passes.
pub fn classify<S: Scalar>(s: &TransitionFeatures<S>, tau: &ThresholdVector<S>) -> MetricFlags {
    MetricFlags {
        cos: s.s_cos >= tau.tau_cos,
        hist: s.s_hist >= tau.tau_hist,
        iou: s.s_iou >= tau.tau_iou,
        lpips: s.d_lpips <= tau.tau_lpips(),
    }
}
