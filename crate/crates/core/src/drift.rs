//! Per-dimension semantic drift bounds on masked foreground/background embeddings.
//!
//! The constraint for a transition `(i, j)` is
//!
//! ```text
//! (forall d: |fg_i[d] - fg_j[d]| <= eps_s) and (forall d: |bg_i[d] - bg_j[d]| <= eps_bg)
//! ```
//!
//! It is a conjunction of interval checks, so [`check_drift`] decides it directly and exactly:
//! the difference is recovered without rounding error before the comparison. [`emit_smtlib`]
//! renders the same constraint set as a QF_LRA script with exact rational constants for an
//! external solver to cross-check.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use num_bigint::BigInt;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::FrameRecord;
use crate::scalar::Scalar;

pub const TOLERANCE_SAFETY_FACTOR: f64 = 1.05;
pub const TOLERANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_QUANTILE: f64 = 0.99;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("{region} embedding length mismatch: {left} vs {right}")]
    LengthMismatch {
        region: Region,
        left: usize,
        right: usize,
    },
    #[error("tolerance calibration needs at least one positive pair")]
    NoCalibrationPairs,
    #[error("quantile must lie in (0, 1], got {0}")]
    BadQuantile(f64),
    #[error("tolerances must be positive and finite (eps_s={eps_s}, eps_bg={eps_bg})")]
    BadTolerance { eps_s: f64, eps_bg: f64 },
    #[error("solver `{command}` failed: {reason}")]
    Solver { command: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Fg,
    Bg,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Fg => "fg",
            Region::Bg => "bg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DriftTolerances<S: Scalar = f64> {
    pub eps_s: S,
    pub eps_bg: S,
}

impl<S: Scalar> DriftTolerances<S> {
    pub fn new(eps_s: S, eps_bg: S) -> Result<Self, DriftError> {
        let ok = |e: S| e > S::zero() && e.is_finite();
        if !(ok(eps_s) && ok(eps_bg)) {
            return Err(DriftError::BadTolerance {
                eps_s: eps_s.to_f64_exact(),
                eps_bg: eps_bg.to_f64_exact(),
            });
        }
        Ok(Self { eps_s, eps_bg })
    }

    pub fn for_region(&self, region: Region) -> S {
        match region {
            Region::Fg => self.eps_s,
            Region::Bg => self.eps_bg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DriftViolation<S: Scalar = f64> {
    pub region: Region,
    pub dimension: usize,
    pub difference: S,
    pub tolerance: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DriftVerdict<S: Scalar = f64> {
    pub satisfied: bool,
    pub violations: Vec<DriftViolation<S>>,
}

/// Exact test of `|a - b| > eps`.
///
/// `a - b` is split into its rounded value and rounding error (two-sum), so the comparison is
/// decided on the exact real difference even when the rounded difference lands on `eps`.
pub fn exceeds_tolerance<S: Float>(a: S, b: S, eps: S) -> bool {
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    let nb = -b;
    let s = a + nb;
    let bv = s - a;
    let av = s - bv;
    let err = (a - av) + (nb - bv);
    if !s.is_finite() {
        return true;
    }
    s > eps || (s == eps && err > S::zero())
}

fn region_pairs<'a, S: Scalar>(
    fi: &'a FrameRecord<S>,
    fj: &'a FrameRecord<S>,
) -> Result<[(Region, &'a [S], &'a [S]); 2], DriftError> {
    let pairs = [
        (Region::Fg, fi.fg_embedding.as_slice(), fj.fg_embedding.as_slice()),
        (Region::Bg, fi.bg_embedding.as_slice(), fj.bg_embedding.as_slice()),
    ];
    for (region, a, b) in pairs {
        if a.len() != b.len() {
            return Err(DriftError::LengthMismatch {
                region,
                left: a.len(),
                right: b.len(),
            });
        }
    }
    Ok(pairs)
}

/// Decides the drift constraint; violations are listed by region, then dimension.
pub fn check_drift<S: Scalar>(
    fi: &FrameRecord<S>,
    fj: &FrameRecord<S>,
    tol: &DriftTolerances<S>,
) -> Result<DriftVerdict<S>, DriftError> {
    let mut violations = Vec::new();
    for (region, a, b) in region_pairs(fi, fj)? {
        let eps = tol.for_region(region);
        for (dimension, (&x, &y)) in a.iter().zip(b).enumerate() {
            if exceeds_tolerance(x, y, eps) {
                violations.push(DriftViolation {
                    region,
                    dimension,
                    difference: (x - y).abs(),
                    tolerance: eps,
                });
            }
        }
    }
    Ok(DriftVerdict {
        satisfied: violations.is_empty(),
        violations,
    })
}

fn max_abs_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(S::zero(), S::max)
}

/// Nearest-rank quantile of an unsorted sample.
fn quantile<S: Scalar>(mut xs: Vec<S>, q: f64) -> S {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite drift values"));
    let rank = (q * xs.len() as f64).ceil() as usize;
    xs[rank.clamp(1, xs.len()) - 1]
}

/// Tolerances from the `quantile` of per-pair maximum drift over known-consistent pairs,
/// scaled by a 5% safety margin and floored at 1e-6.
pub fn calibrate_tolerances<S: Scalar>(
    positives: &[(&FrameRecord<S>, &FrameRecord<S>)],
    quantile_level: f64,
) -> Result<DriftTolerances<S>, DriftError> {
    if positives.is_empty() {
        return Err(DriftError::NoCalibrationPairs);
    }
    if !(quantile_level > 0.0 && quantile_level <= 1.0) {
        return Err(DriftError::BadQuantile(quantile_level));
    }
    let mut fg = Vec::with_capacity(positives.len());
    let mut bg = Vec::with_capacity(positives.len());
    for (a, b) in positives {
        let [(_, fa, fb), (_, ba, bb)] = region_pairs(a, b)?;
        fg.push(max_abs_diff(fa, fb));
        bg.push(max_abs_diff(ba, bb));
    }
    let scale = |drift: S| {
        // rounding up keeps the quantile=1 guarantee exact
        let eps = drift * S::lit(TOLERANCE_SAFETY_FACTOR);
        eps.max(drift).max(S::lit(TOLERANCE_FLOOR))
    };
    DriftTolerances::new(scale(quantile(fg, quantile_level)), scale(quantile(bg, quantile_level)))
}

/// Exact SMT-LIB2 real literal for a finite float.
pub fn smt_real<S: Scalar>(x: S) -> String {
    let x = x.to_f64_exact();
    assert!(x.is_finite(), "SMT literal of non-finite value");
    if x == 0.0 {
        return "0.0".into();
    }
    let (mut mantissa, mut exponent, sign) = Float::integer_decode(x);
    while mantissa % 2 == 0 && exponent < 0 {
        mantissa /= 2;
        exponent += 1;
    }
    let mut num = BigInt::from(mantissa);
    let mut den = BigInt::from(1u8);
    if exponent >= 0 {
        num <<= exponent as usize;
    } else {
        den <<= (-exponent) as usize;
    }
    let body = if den == BigInt::from(1u8) {
        format!("{num}.0")
    } else {
        format!("(/ {num}.0 {den}.0)")
    };
    if sign < 0 {
        format!("(- {body})")
    } else {
        body
    }
}

/// QF_LRA script asserting the drift constraint, one assert per embedding dimension.
/// `sat` from a solver means the constraint holds.
pub fn emit_smtlib<S: Scalar>(
    fi: &FrameRecord<S>,
    fj: &FrameRecord<S>,
    tol: &DriftTolerances<S>,
) -> Result<String, DriftError> {
    let pairs = region_pairs(fi, fj)?;
    let mut out = String::new();
    writeln!(out, "; drift bounds for frames {} -> {}", fi.frame_index, fj.frame_index).unwrap();
    out.push_str("(set-logic QF_LRA)\n");
    writeln!(out, "(define-fun eps_s () Real {})", smt_real(tol.eps_s)).unwrap();
    writeln!(out, "(define-fun eps_bg () Real {})", smt_real(tol.eps_bg)).unwrap();
    for (region, a, b) in pairs {
        let eps = match region {
            Region::Fg => "eps_s",
            Region::Bg => "eps_bg",
        };
        for (d, (&x, &y)) in a.iter().zip(b).enumerate() {
            let (x, y) = (smt_real(x), smt_real(y));
            writeln!(
                out,
                "(assert (! (and (<= (- {x} {y}) {eps}) (<= (- {y} {x}) {eps})) :named {region}_{d}))"
            )
            .unwrap();
        }
    }
    out.push_str("(check-sat)\n(exit)\n");
    Ok(out)
}

/// External solver invoked as `<command> <file>`, answering `sat` or `unsat` on stdout.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    pub command: String,
}

impl ExternalSolver {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
        }
    }

    pub fn check_file(&self, path: &Path) -> Result<bool, DriftError> {
        let solver_err = |reason: String| DriftError::Solver {
            command: self.command.clone(),
            reason,
        };
        let output = Command::new(&self.command)
            .arg(path)
            .output()
            .map_err(|e| solver_err(e.to_string()))?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        match stdout.lines().map(str::trim).find(|l| !l.is_empty()) {
            Some("sat") => Ok(true),
            Some("unsat") => Ok(false),
            other => Err(solver_err(format!(
                "unexpected answer {:?} (exit status {})",
                other, output.status
            ))),
        }
    }

    pub fn check_script(&self, script: &str, dir: &Path) -> Result<bool, DriftError> {
        let path = dir.join(format!("drift-{}.smt2", std::process::id()));
        std::fs::File::create(&path)?.write_all(script.as_bytes())?;
        let answer = self.check_file(&path);
        let _ = std::fs::remove_file(&path);
        answer
    }
}
