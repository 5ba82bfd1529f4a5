//! Pairwise consistency metrics between two frames.

use thiserror::Error;

use crate::feature::{BinaryMask, FrameRecord, TransitionFeatures};
use crate::scalar::{dot, l2_norm, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{argument} argument has zero norm")]
    ZeroNorm { argument: &'static str },
    #[error("mask dimensions differ: {left_h}x{left_w} vs {right_h}x{right_w}")]
    MaskDimensions {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },
}

fn check_lengths<S>(a: &[S], b: &[S]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn normalized_dot<S: Scalar>(a: &[S], b: &[S]) -> Result<S, MetricError> {
    check_lengths(a, b)?;
    let na = l2_norm(a);
    if na == S::zero() {
        return Err(MetricError::ZeroNorm { argument: "first" });
    }
    let nb = l2_norm(b);
    if nb == S::zero() {
        return Err(MetricError::ZeroNorm { argument: "second" });
    }
    Ok(dot(a, b) / (na * nb))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> Result<S, MetricError> {
    normalized_dot(a, b).map(|c| c.max(-S::one()).min(S::one()))
}

/// Correlation of two flattened color histograms (`h1·h2 / (|h1| |h2|)`).
pub fn histogram_correlation<S: Scalar>(h1: &[S], h2: &[S]) -> Result<S, MetricError> {
    normalized_dot(h1, h2).map(|c| c.max(-S::one()).min(S::one()))
}

/// Intersection over union of two foreground masks, computed on the runs.
///
/// Two empty masks agree that there is no object and score 1.
pub fn mask_iou<S: Scalar>(m1: &BinaryMask, m2: &BinaryMask) -> Result<S, MetricError> {
    if (m1.height, m1.width) != (m2.height, m2.width) {
        return Err(MetricError::MaskDimensions {
            left_h: m1.height,
            left_w: m1.width,
            right_h: m2.height,
            right_w: m2.width,
        });
    }
    let inter = m1.intersection_count(m2);
    let union = m1.count_ones() + m2.count_ones() - inter;
    if union == 0 {
        return Ok(S::one());
    }
    Ok(S::from_usize_lossy(inter) / S::from_usize_lossy(union))
}

/// Euclidean distance between perceptual feature vectors.
pub fn lpips_distance<S: Scalar>(phi1: &[S], phi2: &[S]) -> Result<S, MetricError> {
    check_lengths(phi1, phi2)?;
    Ok(phi1
        .iter()
        .zip(phi2)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<S>()
        .sqrt())
}

pub fn transition_features<S: Scalar>(
    fi: &FrameRecord<S>,
    fj: &FrameRecord<S>,
) -> Result<TransitionFeatures<S>, MetricError> {
    Ok(TransitionFeatures::new(
        cosine_similarity(&fi.clip_embedding, &fj.clip_embedding)?,
        histogram_correlation(&fi.histogram, &fj.histogram)?,
        mask_iou(&fi.mask, &fj.mask)?,
        lpips_distance(&fi.lpips_features, &fj.lpips_features)?,
    ))
}
