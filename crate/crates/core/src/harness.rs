//! Synthetic benchmark harness: clean feature streams, calibrated fixtures, inconsistency
//! injection and detection scoring.
//!
//! Injected events are sized relative to the calibrated thresholds and tolerances, so a severity
//! of `m` puts the targeted metric `m` times as far past its bound as the bound is from perfect
//! agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{calibrate_tolerances, DriftTolerances, DEFAULT_QUANTILE};
use crate::engine::{Check, VerificationReport};
use crate::error::Error;
use crate::feature::{BinaryMask, BitMatrix, FrameRecord};
use crate::metrics::{histogram_correlation, transition_features};
use crate::pipeline::{run_loop, LoopResult, PipelineConfig};
use crate::repair::BuiltinInterpolator;
use crate::temporal::{parse_spec, TemporalCheck};
use crate::threshold::{fit_thresholds, FitConfig, ThresholdVector, TrainingSet};

/// Sharper than the library default so that the product of metric probabilities over a few
/// hundred clean transitions stays near 1.
pub const HARNESS_LAMBDA: f64 = 50.0;
pub const DEFAULT_SEVERITY: f64 = 3.0;
pub const BENCH_SPEC: &str = "G visible";
pub const BENCH_SAT_THRESHOLD: f64 = 0.5;
pub const BENCH_PROP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("event {index} covers frames {start}..{end} outside a {frames}-frame video")]
    OutOfBounds {
        index: usize,
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("event {index} has zero length")]
    EmptyEvent { index: usize },
    #[error("events {first} and {second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("event {index}: no proposition `{prop}` in the video")]
    UnknownProposition { index: usize, prop: String },
    #[error("event {index}: severity {severity} must be positive")]
    BadSeverity { index: usize, severity: f64 },
    #[error("cannot place {events} events with valid anchors in {frames} frames")]
    NoRoom { events: usize, frames: usize },
    #[error("video needs at least 2 frames, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub frames: usize,
    pub clip_dim: usize,
    pub lpips_dim: usize,
    pub hist_bins: usize,
    pub mask_side: usize,
    pub object_side: usize,
    /// Largest per-dimension step of the masked embeddings between consecutive frames.
    pub embedding_step: f64,
    pub props: Vec<String>,
}

impl SyntheticConfig {
    pub fn with_frames(frames: usize) -> Self {
        Self {
            frames,
            ..Self::default()
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            clip_dim: 32,
            lpips_dim: 16,
            hist_bins: 48,
            mask_side: 32,
            object_side: 20,
            embedding_step: 0.02,
            props: vec!["visible".to_string()],
        }
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn normalize_l1(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn step(rng: &mut ChaCha8Rng, v: &mut [f64], delta: f64) {
    v.iter_mut().for_each(|x| *x += rng.gen_range(-delta..=delta));
}

fn rect_mask(side: usize, object: usize, top: usize, left: usize) -> BinaryMask {
    let mut m = BitMatrix::zeros(side, side);
    for r in top..(top + object).min(side) {
        for c in left..(left + object).min(side) {
            m.set(r, c, true);
        }
    }
    BinaryMask::encode(&m)
}

/// A slowly moving object with smoothly drifting features; every transition is consistent.
pub fn clean_video(cfg: &SyntheticConfig, seed: u64) -> Vec<FrameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clip = uniform_vec(&mut rng, cfg.clip_dim, -1.0, 1.0);
    normalize(&mut clip);
    let mut fg = uniform_vec(&mut rng, cfg.clip_dim, -1.0, 1.0);
    let mut bg = uniform_vec(&mut rng, cfg.clip_dim, -1.0, 1.0);
    let mut lpips = uniform_vec(&mut rng, cfg.lpips_dim, 0.0, 1.0);
    let mut weights = uniform_vec(&mut rng, cfg.hist_bins, 1.0, 1.5);
    let (phase_x, phase_y): (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let slack = cfg.mask_side.saturating_sub(cfg.object_side);
    let (amp_x, amp_y) = ((slack / 2).min(4) as f64, (slack / 2).min(2) as f64);
    let centre = (slack / 2) as f64;

    let mut video = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            step(&mut rng, &mut clip, 0.02);
            normalize(&mut clip);
            step(&mut rng, &mut fg, cfg.embedding_step);
            step(&mut rng, &mut bg, cfg.embedding_step);
            step(&mut rng, &mut lpips, 0.01);
            step(&mut rng, &mut weights, 0.01);
            weights.iter_mut().for_each(|w| *w = w.max(0.1));
        }
        let tf = t as f64;
        let left = (centre + amp_x * (2.0 * PI * tf / 80.0 + phase_x).sin()).round() as usize;
        let top = (centre + amp_y * (2.0 * PI * tf / 120.0 + phase_y).sin()).round() as usize;
        let mut hist = weights.clone();
        normalize_l1(&mut hist);
        let props = cfg
            .props
            .iter()
            .map(|p| (p.clone(), rng.gen_range(0.85..0.95)))
            .collect();
        video.push(FrameRecord {
            frame_index: t,
            clip_embedding: clip.clone(),
            fg_embedding: fg.clone(),
            bg_embedding: bg.clone(),
            lpips_features: lpips.clone(),
            histogram: hist,
            mask: rect_mask(cfg.mask_side, cfg.object_side, top, left),
            prop_confidences: props,
            image_path: None,
        });
    }
    video
}

/// A badly edited copy of `clean`: every modality of every frame is replaced or displaced.
pub fn edited_video(clean: &[FrameRecord], seed: u64) -> Vec<FrameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .map(|f| {
            let mut clip = uniform_vec(&mut rng, f.clip_embedding.len(), -1.0, 1.0);
            normalize(&mut clip);
            let bins = f.histogram.len();
            let mut hist = vec![0.0; bins];
            for b in sample(&mut rng, bins, 3.min(bins)).iter() {
                hist[b] = rng.gen_range(0.5..1.0);
            }
            normalize_l1(&mut hist);
            let mut noise = uniform_vec(&mut rng, f.lpips_features.len(), -1.0, 1.0);
            normalize(&mut noise);
            let scale = rng.gen_range(1.0..2.0);
            let (h, w) = (f.mask.height, f.mask.width);
            let bits = (0..h * w).map(|_| rng.gen_bool(0.4)).collect();
            FrameRecord {
                clip_embedding: clip,
                histogram: hist,
                lpips_features: f
                    .lpips_features
                    .iter()
                    .zip(&noise)
                    .map(|(x, n)| x + scale * n)
                    .collect(),
                mask: BinaryMask::encode(&BitMatrix::from_bits(h, w, bits)),
                ..f.clone()
            }
        })
        .collect()
}

/// How negative examples are paired when building a training set from two videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePairing {
    /// Frame `i` of the reference video against frame `i` of the inconsistent one.
    #[default]
    SameIndex,
    /// Consecutive frames of the inconsistent video.
    Adjacent,
}

/// Positives are the consecutive pairs of `positives`; negatives are paired per `pairing`.
pub fn training_set(
    positives: &[FrameRecord],
    negatives: &[FrameRecord],
    pairing: NegativePairing,
) -> Result<TrainingSet, Error> {
    let pos = positives
        .windows(2)
        .map(|w| transition_features(&w[0], &w[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let neg = match pairing {
        NegativePairing::SameIndex => positives
            .iter()
            .zip(negatives)
            .map(|(a, b)| transition_features(a, b))
            .collect::<Result<Vec<_>, _>>()?,
        NegativePairing::Adjacent => negatives
            .windows(2)
            .map(|w| transition_features(&w[0], &w[1]))
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok(TrainingSet::new(pos, neg)?)
}

/// Drift tolerances from the consecutive pairs of a clean video.
pub fn calibrate_on(clean: &[FrameRecord], quantile: f64) -> Result<DriftTolerances, Error> {
    let pairs: Vec<_> = clean.windows(2).map(|w| (&w[0], &w[1])).collect();
    Ok(calibrate_tolerances(&pairs, quantile)?)
}

/// Thresholds and tolerances learned from an independent clean reference video.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub config: SyntheticConfig,
    pub thresholds: ThresholdVector,
    pub tolerances: DriftTolerances,
}

impl Fixture {
    pub fn calibrated(config: SyntheticConfig, seed: u64) -> Result<Self, Error> {
        let reference_cfg = SyntheticConfig {
            frames: 200,
            ..config.clone()
        };
        let reference = clean_video(&reference_cfg, seed ^ 0x5E_ED0F_CA11);
        let edited = edited_video(&reference, seed ^ 0xED17);
        let train = training_set(&reference, &edited, NegativePairing::SameIndex)?;
        let fit = fit_thresholds(
            &train,
            &FitConfig {
                lambda: HARNESS_LAMBDA,
                ..FitConfig::default()
            },
        )?;
        Ok(Self {
            config,
            thresholds: fit.thresholds,
            tolerances: calibrate_on(&reference, DEFAULT_QUANTILE)?,
        })
    }

    pub fn scale(&self) -> InjectionScale {
        InjectionScale::new(&self.thresholds, &self.tolerances)
    }

    pub fn temporal_check() -> TemporalCheck {
        TemporalCheck::new(
            parse_spec(BENCH_SPEC).expect("bench spec parses"),
            BENCH_SAT_THRESHOLD,
            BENCH_PROP_THRESHOLD,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EmbeddingDrift,
    ColorShift,
    MaskJitter,
    PerceptualNoise,
    PropFlip,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::EmbeddingDrift,
        EventKind::ColorShift,
        EventKind::MaskJitter,
        EventKind::PerceptualNoise,
        EventKind::PropFlip,
    ];

    /// The event type each check is meant to catch.
    pub fn targeted_by(check: Check) -> EventKind {
        match check {
            Check::Iou => EventKind::MaskJitter,
            Check::Smt | Check::Clip => EventKind::EmbeddingDrift,
            Check::Lpips => EventKind::PerceptualNoise,
            Check::Hist => EventKind::ColorShift,
            Check::Temporal => EventKind::PropFlip,
        }
    }
}

fn default_severity() -> f64 {
    DEFAULT_SEVERITY
}

/// Corrupts frames `start..start + length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub kind: EventKind,
    pub start: usize,
    pub length: usize,
    #[serde(default = "default_severity")]
    pub severity: f64,
    /// Proposition dropped by a prop flip; the first one in the video when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop: Option<String>,
}

impl InjectedEvent {
    pub fn new(kind: EventKind, start: usize, length: usize) -> Self {
        Self {
            kind,
            start,
            length,
            severity: DEFAULT_SEVERITY,
            prop: None,
        }
    }

    pub fn with_severity(mut self, severity: f64) -> Self {
        self.severity = severity;
        self
    }

    fn end(&self) -> usize {
        self.start + self.length
    }

    /// Transitions whose consistency the event breaks. A prop flip is caught where the label
    /// first changes.
    pub fn affected_transitions(&self, num_frames: usize) -> BTreeSet<usize> {
        let last = num_frames.saturating_sub(2);
        let lo = self.start.saturating_sub(1);
        let hi = match self.kind {
            EventKind::PropFlip => self.start,
            _ => self.end() - 1,
        }
        .min(last);
        (lo..=hi).collect()
    }
}

/// Bounds an injection is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionScale {
    pub eps_s: f64,
    pub tau_cos: f64,
    pub tau_hist: f64,
    pub tau_iou: f64,
    pub tau_lpips: f64,
}

impl InjectionScale {
    pub fn new(thresholds: &ThresholdVector, tolerances: &DriftTolerances) -> Self {
        Self {
            eps_s: tolerances.eps_s,
            tau_cos: thresholds.tau_cos,
            tau_hist: thresholds.tau_hist,
            tau_iou: thresholds.tau_iou,
            tau_lpips: thresholds.tau_lpips(),
        }
    }
}

/// Transitions each event type is expected to break.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub num_transitions: usize,
    pub by_kind: BTreeMap<EventKind, BTreeSet<usize>>,
}

impl GroundTruth {
    pub fn targeted(&self, kind: EventKind) -> BTreeSet<usize> {
        self.by_kind.get(&kind).cloned().unwrap_or_default()
    }

    pub fn all(&self) -> BTreeSet<usize> {
        self.by_kind.values().flatten().copied().collect()
    }
}

/// Unit vectors orthogonal to `against` and to each other.
fn orthonormal_pair(rng: &mut ChaCha8Rng, against: &[f64]) -> [Vec<f64>; 2] {
    let n = against.len();
    let project_out = |v: &mut Vec<f64>, u: &[f64]| {
        let uu: f64 = u.iter().map(|x| x * x).sum();
        if uu > 0.0 {
            let c = v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / uu;
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        }
    };
    let mut a = uniform_vec(rng, n, -1.0, 1.0);
    project_out(&mut a, against);
    normalize(&mut a);
    let mut b = uniform_vec(rng, n, -1.0, 1.0);
    project_out(&mut b, against);
    project_out(&mut b, &a);
    normalize(&mut b);
    [a, b]
}

fn rotate_clip(clip: &mut [f64], direction: &[f64], cos_target: f64) {
    let mut u = direction.to_vec();
    let c = u.iter().zip(clip.iter()).map(|(a, b)| a * b).sum::<f64>();
    u.iter_mut().zip(clip.iter()).for_each(|(a, b)| *a -= c * b);
    normalize(&mut u);
    let s = (1.0 - cos_target * cos_target).max(0.0).sqrt();
    clip.iter_mut().zip(&u).for_each(|(x, d)| *x = cos_target * *x + s * d);
    normalize(clip);
}

/// Blends a histogram toward bin `bin` until its correlation with the original drops to
/// `target`, or all the way if that is not reachable.
fn shift_histogram(hist: &[f64], bin: usize, target: f64) -> Vec<f64> {
    let blend = |w: f64| -> Vec<f64> {
        let mut h: Vec<f64> = hist.iter().map(|x| (1.0 - w) * x).collect();
        h[bin] += w;
        h
    };
    let corr = |w: f64| histogram_correlation(hist, &blend(w)).unwrap_or(0.0);
    if corr(1.0) >= target {
        return blend(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if corr(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut h = blend(hi);
    normalize_l1(&mut h);
    h
}

/// Moves `r` foreground pixels to the background, taken from the front of the mask on even
/// parity and from the back on odd parity so that neighbouring jittered frames disagree too.
fn jitter_mask(mask: &BinaryMask, target_iou: f64, parity: usize) -> BinaryMask {
    let mut m = mask.decode().expect("harness masks are valid");
    let ones: Vec<usize> = (0..m.bits().len()).filter(|&i| m.bits()[i]).collect();
    let zeros: Vec<usize> = (0..m.bits().len()).filter(|&i| !m.bits()[i]).collect();
    let n = ones.len() as f64;
    let r = ((n * (1.0 - target_iou) / (1.0 + target_iou)).round() as usize)
        .min(ones.len())
        .min(zeros.len());
    let bits = m.bits_mut();
    let (remove, add): (Vec<usize>, Vec<usize>) = if parity.is_multiple_of(2) {
        (ones[..r].to_vec(), zeros[..r].to_vec())
    } else {
        (ones[ones.len() - r..].to_vec(), zeros[zeros.len() - r..].to_vec())
    };
    remove.into_iter().for_each(|i| bits[i] = false);
    add.into_iter().for_each(|i| bits[i] = true);
    BinaryMask::encode(&m)
}

fn check_events(video: &[FrameRecord], events: &[InjectedEvent]) -> Result<(), HarnessError> {
    for (index, e) in events.iter().enumerate() {
        if e.length == 0 {
            return Err(HarnessError::EmptyEvent { index });
        }
        if e.end() > video.len() {
            return Err(HarnessError::OutOfBounds {
                index,
                start: e.start,
                end: e.end(),
                frames: video.len(),
            });
        }
        if !(e.severity > 0.0 && e.severity.is_finite()) {
            return Err(HarnessError::BadSeverity {
                index,
                severity: e.severity,
            });
        }
        if let Some(prop) = &e.prop {
            if video.iter().any(|f| !f.prop_confidences.contains_key(prop)) {
                return Err(HarnessError::UnknownProposition {
                    index,
                    prop: prop.clone(),
                });
            }
        }
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| events[i].start);
    for w in order.windows(2) {
        if events[w[1]].start < events[w[0]].end() {
            let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(HarnessError::Overlap { first, second });
        }
    }
    Ok(())
}

pub fn inject_inconsistencies(
    clean: &[FrameRecord],
    events: &[InjectedEvent],
    scale: &InjectionScale,
    seed: u64,
) -> Result<(Vec<FrameRecord>, GroundTruth), HarnessError> {
    if clean.len() < 2 {
        return Err(HarnessError::TooShort(clean.len()));
    }
    check_events(clean, events)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut video = clean.to_vec();
    let mut truth = GroundTruth {
        num_transitions: clean.len() - 1,
        by_kind: BTreeMap::new(),
    };
    for event in events {
        let m = event.severity;
        let frames = event.start..event.end();
        match event.kind {
            EventKind::EmbeddingDrift => {
                let cos_target = (1.0 - m * (1.0 - scale.tau_cos)).max(0.0);
                let dirs = orthonormal_pair(&mut rng, &video[event.start].clip_embedding);
                for (o, f) in video[frames].iter_mut().enumerate() {
                    let sign = if o % 2 == 0 { 1.0 } else { -1.0 };
                    f.fg_embedding.iter_mut().for_each(|x| *x += sign * m * scale.eps_s);
                    rotate_clip(&mut f.clip_embedding, &dirs[o % 2], cos_target);
                }
            }
            EventKind::ColorShift => {
                let target = (1.0 - m * (1.0 - scale.tau_hist)).max(0.0);
                let bins = sample(&mut rng, video[0].histogram.len(), 2);
                for (o, f) in video[frames].iter_mut().enumerate() {
                    f.histogram = shift_histogram(&f.histogram, bins.index(o % 2), target);
                }
            }
            EventKind::MaskJitter => {
                let target = (1.0 - m * (1.0 - scale.tau_iou)).max(0.0);
                for (o, f) in video[frames].iter_mut().enumerate() {
                    f.mask = jitter_mask(&f.mask, target, o);
                }
            }
            EventKind::PerceptualNoise => {
                let dim = video[event.start].lpips_features.len();
                let dirs = orthonormal_pair(&mut rng, &vec![0.0; dim]);
                let amplitude = m * scale.tau_lpips;
                for (o, f) in video[frames].iter_mut().enumerate() {
                    f.lpips_features
                        .iter_mut()
                        .zip(&dirs[o % 2])
                        .for_each(|(x, d)| *x += amplitude * d);
                }
            }
            EventKind::PropFlip => {
                let prop = match &event.prop {
                    Some(p) => p.clone(),
                    None => video[event.start]
                        .prop_confidences
                        .keys()
                        .next()
                        .cloned()
                        .ok_or(HarnessError::UnknownProposition {
                            index: 0,
                            prop: String::new(),
                        })?,
                };
                for f in &mut video[frames] {
                    f.prop_confidences.insert(prop.clone(), 0.0);
                }
            }
        }
        truth
            .by_kind
            .entry(event.kind)
            .or_default()
            .extend(event.affected_transitions(clean.len()));
    }
    Ok((video, truth))
}

/// Places `kinds.len()` events at random so that each one keeps two clean anchor frames and
/// neighbouring runs stay apart. Prop flips last one frame; other events 1 to `max_length`.
pub fn random_events(
    num_frames: usize,
    kinds: &[EventKind],
    max_length: usize,
    rng: &mut impl Rng,
) -> Result<Vec<InjectedEvent>, HarnessError> {
    let lengths: Vec<usize> = kinds
        .iter()
        .map(|k| match k {
            EventKind::PropFlip => 1,
            _ => rng.gen_range(1..=max_length.max(1)),
        })
        .collect();
    let needed: usize = lengths.iter().map(|l| l + 2).sum();
    if kinds.is_empty() {
        return Ok(Vec::new());
    }
    let slack = (num_frames.checked_sub(2))
        .and_then(|n| n.checked_sub(needed))
        .ok_or(HarnessError::NoRoom {
            events: kinds.len(),
            frames: num_frames,
        })?;
    // split the slack into kinds.len() + 1 gaps
    let mut cuts: Vec<usize> = (0..kinds.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(kinds.len());
    let mut cursor = 2;
    let mut prev_cut = 0;
    for ((kind, length), cut) in kinds.iter().zip(&lengths).zip(&cuts) {
        let start = cursor + (cut - prev_cut);
        prev_cut = *cut;
        events.push(InjectedEvent::new(*kind, start, *length));
        cursor = start + length + 2;
    }
    Ok(events)
}

/// Confusion counts for one check against its targeted transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckCounts {
    pub flagged: usize,
    pub true_positives: usize,
    pub targeted: usize,
}

impl CheckCounts {
    /// 1.0 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        if self.flagged == 0 {
            1.0
        } else {
            self.true_positives as f64 / self.flagged as f64
        }
    }

    /// 1.0 when nothing was targeted.
    pub fn recall(&self) -> f64 {
        if self.targeted == 0 {
            1.0
        } else {
            self.true_positives as f64 / self.targeted as f64
        }
    }

    fn add(&mut self, other: &CheckCounts) {
        self.flagged += other.flagged;
        self.true_positives += other.true_positives;
        self.targeted += other.targeted;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionScore {
    pub per_check: BTreeMap<Check, CheckCounts>,
    /// Any flag against any event.
    pub overall: CheckCounts,
}

impl DetectionScore {
    pub fn merge(&mut self, other: &DetectionScore) {
        for (check, counts) in &other.per_check {
            self.per_check.entry(*check).or_default().add(counts);
        }
        self.overall.add(&other.overall);
    }

    pub fn get(&self, check: Check) -> CheckCounts {
        self.per_check.get(&check).copied().unwrap_or_default()
    }
}

fn counts(flagged: &BTreeSet<usize>, targeted: &BTreeSet<usize>) -> CheckCounts {
    CheckCounts {
        flagged: flagged.len(),
        true_positives: flagged.intersection(targeted).count(),
        targeted: targeted.len(),
    }
}

pub fn score_detection<S: crate::Scalar>(report: &VerificationReport<S>, truth: &GroundTruth) -> DetectionScore {
    let per_check = Check::ALL
        .iter()
        .map(|&check| {
            let flagged: BTreeSet<usize> = report
                .verdicts
                .iter()
                .filter(|v| check.fails(v))
                .map(|v| v.transition)
                .collect();
            (check, counts(&flagged, &truth.targeted(EventKind::targeted_by(check))))
        })
        .collect();
    let flagged: BTreeSet<usize> = report.inconsistent.iter().copied().collect();
    DetectionScore {
        per_check,
        overall: counts(&flagged, &truth.all()),
    }
}

/// Everything one benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub fixture: Fixture,
    pub clean: Vec<FrameRecord>,
    pub corrupted: Vec<FrameRecord>,
    pub truth: GroundTruth,
    pub score: DetectionScore,
    pub result: LoopResult,
}

/// Calibrates, injects `events` into a fresh clean video, scores the first verification and
/// runs the repair loop with the built-in interpolator.
pub fn run_bench(frames: usize, events: &[InjectedEvent], seed: u64) -> Result<BenchOutcome, Error> {
    let fixture = Fixture::calibrated(SyntheticConfig::with_frames(frames), seed)?;
    let clean = clean_video(&fixture.config, seed);
    let (corrupted, truth) = inject_inconsistencies(&clean, events, &fixture.scale(), seed.wrapping_add(1))?;
    let cfg = PipelineConfig::new(fixture.thresholds, fixture.tolerances).with_temporal(Fixture::temporal_check());
    let result = run_loop(corrupted.clone(), &cfg, &BuiltinInterpolator)?;
    let score = score_detection(&result.reports[0], &truth);
    Ok(BenchOutcome {
        fixture,
        clean,
        corrupted,
        truth,
        score,
        result,
    })
}
