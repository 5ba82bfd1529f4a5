//! Frame feature records, run-length encoded masks, and the JSONL wire format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"frame": 0, "clip": [..], "clip_fg": [..], "clip_bg": [..], "lpips_feat": [..],
//!  "hist": [..], "mask": {"h": 2, "w": 2, "rle": [1, 3]}, "props": {"visible": 0.9},
//!  "image_path": "frames/0000.png"}
//! ```
//!
//! Mask runs are row-major and alternate starting with a run of zeros.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{all_finite, l2_norm, Scalar};

pub const HISTOGRAM_SUM_TOLERANCE: f64 = 1e-6;
pub const UNIT_NORM_WARN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed frame record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("frame {frame}: invalid field `{field}`: {reason}")]
    Invalid {
        frame: usize,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate frame {0}")]
    DuplicateFrame(usize),
    #[error("missing frame {0}")]
    MissingFrame(usize),
    #[error("video contains no frames")]
    Empty,
    #[error("mask run lengths sum to {sum}, expected {expected} ({h}x{w})")]
    MaskLength {
        sum: usize,
        expected: usize,
        h: usize,
        w: usize,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Dense row-major bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl BitMatrix {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "bit count must equal height * width");
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Run-length encoded binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub rle: Vec<usize>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        let rle = if height * width == 0 {
            Vec::new()
        } else {
            vec![height * width]
        };
        Self { height, width, rle }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let sum: usize = self.rle.iter().sum();
        if sum != self.area() {
            return Err(FeatureError::MaskLength {
                sum,
                expected: self.area(),
                h: self.height,
                w: self.width,
            });
        }
        Ok(())
    }

    pub fn encode(m: &BitMatrix) -> Self {
        let mut rle = Vec::new();
        if !m.bits().is_empty() {
            let mut current = false;
            let mut len = 0usize;
            for &b in m.bits() {
                if b == current {
                    len += 1;
                } else {
                    rle.push(len);
                    current = b;
                    len = 1;
                }
            }
            rle.push(len);
        }
        Self {
            height: m.height,
            width: m.width,
            rle,
        }
    }

    pub fn decode(&self) -> Result<BitMatrix, FeatureError> {
        self.validate()?;
        let mut bits = Vec::with_capacity(self.area());
        for (i, &run) in self.rle.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, run));
        }
        Ok(BitMatrix::from_bits(self.height, self.width, bits))
    }

    /// Number of foreground pixels, counted directly on the runs.
    pub fn count_ones(&self) -> usize {
        self.rle.iter().skip(1).step_by(2).sum()
    }

    /// Foreground pixels shared with `other`, computed by merging both run lists.
    /// Both masks must cover the same number of pixels.
    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        let mut a = Runs::new(&self.rle);
        let mut b = Runs::new(&other.rle);
        let mut shared = 0;
        while let (Some((va, la)), Some((vb, lb))) = (a.peek(), b.peek()) {
            let step = la.min(lb);
            if va && vb {
                shared += step;
            }
            a.advance(step);
            b.advance(step);
        }
        shared
    }
}

/// Cursor over (value, remaining length) pairs of an RLE list, skipping empty runs.
struct Runs<'a> {
    rle: &'a [usize],
    index: usize,
    remaining: usize,
}

impl<'a> Runs<'a> {
    fn new(rle: &'a [usize]) -> Self {
        let mut r = Self {
            rle,
            index: 0,
            remaining: rle.first().copied().unwrap_or(0),
        };
        r.skip_empty();
        r
    }

    fn skip_empty(&mut self) {
        while self.remaining == 0 && self.index < self.rle.len() {
            self.index += 1;
            self.remaining = self.rle.get(self.index).copied().unwrap_or(0);
        }
    }

    fn peek(&self) -> Option<(bool, usize)> {
        (self.index < self.rle.len()).then_some((self.index % 2 == 1, self.remaining))
    }

    fn advance(&mut self, n: usize) {
        self.remaining -= n;
        self.skip_empty();
    }
}

/// Everything the engine knows about one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FrameRecord<S: Scalar = f64> {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    #[serde(rename = "clip")]
    pub clip_embedding: Vec<S>,
    #[serde(rename = "clip_fg")]
    pub fg_embedding: Vec<S>,
    #[serde(rename = "clip_bg")]
    pub bg_embedding: Vec<S>,
    #[serde(rename = "lpips_feat")]
    pub lpips_features: Vec<S>,
    #[serde(rename = "hist")]
    pub histogram: Vec<S>,
    pub mask: BinaryMask,
    #[serde(rename = "props", default)]
    pub prop_confidences: BTreeMap<String, S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

impl<S: Scalar> FrameRecord<S> {
    /// Checks the per-record invariants. A clip embedding far from unit norm only warns.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let frame = self.frame_index;
        let invalid = |field, reason: String| FeatureError::Invalid {
            frame,
            field,
            reason,
        };
        for (field, v) in [
            ("clip", &self.clip_embedding),
            ("clip_fg", &self.fg_embedding),
            ("clip_bg", &self.bg_embedding),
            ("lpips_feat", &self.lpips_features),
            ("hist", &self.histogram),
        ] {
            if !all_finite(v) {
                return Err(invalid(field, "contains a non-finite value".into()));
            }
        }
        if let Some(x) = self.histogram.iter().find(|&&x| x < S::zero()) {
            return Err(invalid("hist", format!("negative entry {x}")));
        }
        let sum: S = self.histogram.iter().copied().sum();
        if (sum.to_f64_exact() - 1.0).abs() > HISTOGRAM_SUM_TOLERANCE {
            return Err(invalid(
                "hist",
                format!("entries sum to {sum}, expected 1 (not normalized)"),
            ));
        }
        for (name, &c) in &self.prop_confidences {
            if !(c >= S::zero() && c <= S::one()) {
                return Err(invalid("props", format!("confidence of `{name}` is {c}, outside [0,1]")));
            }
        }
        self.mask
            .validate()
            .map_err(|e| invalid("mask", e.to_string()))?;
        let norm = l2_norm(&self.clip_embedding).to_f64_exact();
        if (norm - 1.0).abs() > UNIT_NORM_WARN_TOLERANCE {
            log::warn!("frame {frame}: clip embedding norm {norm:.6} is not unit");
        }
        Ok(())
    }
}

/// Consistency scores of one frame transition, oriented so that larger means more consistent
/// (the perceptual distance is carried both raw and negated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TransitionFeatures<S: Scalar = f64> {
    pub s_cos: S,
    pub s_hist: S,
    pub s_iou: S,
    pub d_lpips: S,
    pub s_lpips_inverted: S,
}

impl<S: Scalar> TransitionFeatures<S> {
    pub fn new(s_cos: S, s_hist: S, s_iou: S, d_lpips: S) -> Self {
        Self {
            s_cos,
            s_hist,
            s_iou,
            d_lpips,
            s_lpips_inverted: -d_lpips,
        }
    }

    /// The score vector `[cos, hist, iou, -lpips]`.
    pub fn scores(&self) -> [S; 4] {
        [self.s_cos, self.s_hist, self.s_iou, self.s_lpips_inverted]
    }

    pub fn score(&self, metric: Metric) -> S {
        self.scores()[metric.index()]
    }
}

/// The four pairwise metrics, in score-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cos,
    Hist,
    Iou,
    Lpips,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Cos, Metric::Hist, Metric::Iou, Metric::Lpips];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Reads and validates a feature JSONL file.
pub fn load_video<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<FrameRecord<S>>, FeatureError> {
    read_video(File::open(path)?)
}

pub fn read_video<S: Scalar, R: Read>(reader: R) -> Result<Vec<FrameRecord<S>>, FeatureError> {
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord<S> = serde_json::from_str(&line)
            .map_err(|source| FeatureError::Malformed { line: n + 1, source })?;
        frames.push(record);
    }
    validate_video(&mut frames)?;
    Ok(frames)
}

/// Sorts by frame index and checks record invariants, index contiguity, and that all frames
/// share vector dimensions.
pub fn validate_video<S: Scalar>(frames: &mut [FrameRecord<S>]) -> Result<(), FeatureError> {
    if frames.is_empty() {
        return Err(FeatureError::Empty);
    }
    frames.sort_by_key(|f| f.frame_index);
    for (i, f) in frames.iter().enumerate() {
        if f.frame_index < i {
            return Err(FeatureError::DuplicateFrame(f.frame_index));
        }
        if f.frame_index > i {
            return Err(FeatureError::MissingFrame(i));
        }
        f.validate()?;
    }
    let first = &frames[0];
    for f in &frames[1..] {
        let dims = [
            ("clip", first.clip_embedding.len(), f.clip_embedding.len()),
            ("clip_fg", first.fg_embedding.len(), f.fg_embedding.len()),
            ("clip_bg", first.bg_embedding.len(), f.bg_embedding.len()),
            ("lpips_feat", first.lpips_features.len(), f.lpips_features.len()),
            ("hist", first.histogram.len(), f.histogram.len()),
        ];
        for (field, want, got) in dims {
            if want != got {
                return Err(FeatureError::Invalid {
                    frame: f.frame_index,
                    field,
                    reason: format!("length {got} differs from frame 0 length {want}"),
                });
            }
        }
        if (f.mask.height, f.mask.width) != (first.mask.height, first.mask.width) {
            return Err(FeatureError::Invalid {
                frame: f.frame_index,
                field: "mask",
                reason: format!(
                    "dimensions {}x{} differ from frame 0 ({}x{})",
                    f.mask.height, f.mask.width, first.mask.height, first.mask.width
                ),
            });
        }
    }
    Ok(())
}

pub fn write_video<S: Scalar, W: Write>(writer: W, frames: &[FrameRecord<S>]) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(writer);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_video<S: Scalar>(path: impl AsRef<Path>, frames: &[FrameRecord<S>]) -> Result<(), FeatureError> {
    write_video(File::create(path)?, frames)
}
