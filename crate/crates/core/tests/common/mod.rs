//! Reference implementations used as test oracles. They are written from the definitions
//! and share no code with the library beyond its data types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use objectalign::feature::{BinaryMask, BitMatrix};
use objectalign::temporal::Formula;
use objectalign::{Frame, Thresholds, Transition};
use rand::Rng;

/// Recursive finite-trace semantics: does `f` hold at position `i` of `trace`?
pub fn ltlf_holds(f: &Formula, trace: &[BTreeMap<String, bool>], i: usize) -> bool {
    let n = trace.len();
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(a) => trace[i][a],
        Formula::Not(g) => !ltlf_holds(g, trace, i),
        Formula::And(a, b) => ltlf_holds(a, trace, i) && ltlf_holds(b, trace, i),
        Formula::Or(a, b) => ltlf_holds(a, trace, i) || ltlf_holds(b, trace, i),
        Formula::Implies(a, b) => !ltlf_holds(a, trace, i) || ltlf_holds(b, trace, i),
        Formula::Next(g) => i + 1 < n && ltlf_holds(g, trace, i + 1),
        Formula::Until(a, b) => (i..n).any(|j| ltlf_holds(b, trace, j) && (i..j).all(|k| ltlf_holds(a, trace, k))),
        Formula::Eventually(g) => (i..n).any(|j| ltlf_holds(g, trace, j)),
        Formula::Always(g) => (i..n).all(|j| ltlf_holds(g, trace, j)),
    }
}

pub fn label_trace(video: &[Frame], props: &[String], threshold: f64) -> Vec<BTreeMap<String, bool>> {
    video
        .iter()
        .map(|f| props.iter().map(|p| (p.clone(), f.prop_confidences[p] >= threshold)).collect())
        .collect()
}

/// Sums the probability of every run of the chain. A run either stops in FAIL after `j`
/// successful steps or proceeds through every frame; only complete runs whose label trace
/// satisfies the formula count.
pub fn enumerate_paths(f: &Formula, trace: &[BTreeMap<String, bool>], probs: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut reach = 1.0;
    let mut fail_mass = 0.0;
    for &p in probs {
        fail_mass += reach * (1.0 - p);
        reach *= p;
    }
    if ltlf_holds(f, trace, 0) {
        total += reach;
    }
    // FAIL runs never satisfy; keep their mass to confirm the runs partition the space
    assert!((reach + fail_mass - 1.0).abs() < 1e-9);
    total
}

/// Simulates the chain `samples` times.
pub fn monte_carlo(f: &Formula, trace: &[BTreeMap<String, bool>], probs: &[f64], samples: usize, rng: &mut impl Rng) -> f64 {
    let accepted = ltlf_holds(f, trace, 0);
    let mut hits = 0usize;
    for _ in 0..samples {
        if probs.iter().all(|&p| rng.gen::<f64>() < p) && accepted {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

/// Random formula over `props` with nesting depth at most `depth`.
pub fn random_formula(rng: &mut impl Rng, props: &[String], depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..10) {
            0 => Formula::True,
            1 => Formula::False,
            _ => Formula::atom(&props[rng.gen_range(0..props.len())]),
        };
    }
    let sub = |rng: &mut _| random_formula(rng, props, depth - 1);
    match rng.gen_range(0..9) {
        0 => Formula::not(sub(rng)),
        1 => Formula::and(sub(rng), sub(rng)),
        2 => Formula::or(sub(rng), sub(rng)),
        3 => Formula::implies(sub(rng), sub(rng)),
        4 => Formula::next(sub(rng)),
        5 => Formula::until(sub(rng), sub(rng)),
        6 => Formula::eventually(sub(rng)),
        _ => Formula::always(sub(rng)),
    }
}

/// Exact rational value of a finite double.
pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Dimension scan of the drift constraint in exact arithmetic. Returns the violating
/// (region, dimension) pairs, region 0 for foreground.
pub fn drift_violations(a: &Frame, b: &Frame, eps_s: f64, eps_bg: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (r, (xa, xb, eps)) in [
        (&a.fg_embedding, &b.fg_embedding, eps_s),
        (&a.bg_embedding, &b.bg_embedding, eps_bg),
    ]
    .into_iter()
    .enumerate()
    {
        let eps = exact(eps);
        for (d, (&x, &y)) in xa.iter().zip(xb).enumerate() {
            if (exact(x) - exact(y)).abs() > eps {
                out.push((r, d));
            }
        }
    }
    out
}

/// Smallest `g` with `2^g >= k + 1`, by repeated doubling.
pub fn depth_oracle(k: u64) -> u32 {
    let target = k as u128 + 1;
    let mut g = 0;
    let mut power: u128 = 1;
    while power < target {
        power *= 2;
        g += 1;
    }
    g
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross entropy from its definition, in the log-sigmoid form that avoids cancellation
/// in `ln(1 - p)`. Probabilities are clamped to `[c, 1 - c]` by clamping the logit.
pub fn bce_reference(pos: &[Transition], neg: &[Transition], tau: [f64; 4], lambda: f64) -> f64 {
    let n = (pos.len() + neg.len()) as f64;
    let c = 1e-12f64.max(f64::EPSILON);
    let zmax = ((1.0 - c) / c).ln();
    let mut total = 0.0;
    for (set, positive) in [(pos, true), (neg, false)] {
        for s in set {
            let scores = [s.s_cos, s.s_hist, s.s_iou, -s.d_lpips];
            for k in 0..4 {
                let z = (lambda * (scores[k] - tau[k])).clamp(-zmax, zmax);
                // -ln(sigmoid(z)) = softplus(-z), -ln(1 - sigmoid(z)) = softplus(z)
                total += if positive { softplus(-z) } else { softplus(z) };
            }
        }
    }
    total / n
}

pub fn thresholds(tau: [f64; 4], lambda: f64) -> Thresholds {
    Thresholds::from_array(tau, lambda).unwrap()
}

pub fn dense_iou(a: &BitMatrix, b: &BitMatrix) -> f64 {
    let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
    let union = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn random_bits(rng: &mut impl Rng, h: usize, w: usize) -> BitMatrix {
    let density = rng.gen_range(0.0..1.0);
    BitMatrix::from_bits(h, w, (0..h * w).map(|_| rng.gen_bool(density)).collect())
}

pub fn mask_of(bits: &BitMatrix) -> BinaryMask {
    BinaryMask::encode(bits)
}

pub fn rational_of_smt(literal: &str) -> BigRational {
    // "(- x)" | "(/ n.0 d.0)" | "n.0"
    let s = literal.trim();
    if let Some(inner) = s.strip_prefix("(- ").and_then(|r| r.strip_suffix(')')) {
        return -rational_of_smt(inner);
    }
    if let Some(inner) = s.strip_prefix("(/ ").and_then(|r| r.strip_suffix(')')) {
        let mut it = inner.split_whitespace();
        let n = rational_of_smt(it.next().unwrap());
        let d = rational_of_smt(it.next().unwrap());
        assert!(!d.is_zero());
        return n / d;
    }
    let int = s.strip_suffix(".0").expect("integer literal ends in .0");
    BigRational::from_integer(int.parse::<BigInt>().unwrap())
}
