//! Image-level decisions from per-patch class probabilities.
//!
//! For class `c` over patches `i`:
//!
//! * sum:     `s(c) = Σ_i p_i(c)`
//! * product: `s(c) = Π_i p_i(c)`, evaluated as `exp(Σ_i ln max(p_i(c), 1e-12))`
//! * max:     `s(c) = max_i p_i(c)`
//!
//! The decision is `argmax_c s(c)` with ties going to the lowest class index.
//! Per-class terms are accumulated in sorted order so that scores, and
//! therefore ties, do not depend on patch order.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::head::{ProbabilityVector, PROB_FLOOR};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("cannot fuse an empty patch list")]
    Empty,
    #[error("patch {index} has {found} classes, expected {expected}")]
    InconsistentLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown fusion rule {0:?} (expected sum, product or max)")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionRule {
    Summation,
    Product,
    Maximum,
}

impl FusionRule {
    pub const ALL: [FusionRule; 3] = [
        FusionRule::Summation,
        FusionRule::Product,
        FusionRule::Maximum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Summation => "sum",
            FusionRule::Product => "product",
            FusionRule::Maximum => "max",
        }
    }

    /// Parses a comma-separated list like `sum,max`.
    pub fn parse_list(s: &str) -> Result<Vec<FusionRule>, FusionError> {
        let mut rules = Vec::new();
        for tok in s.split(',') {
            let r: FusionRule = tok.trim().parse()?;
            if !rules.contains(&r) {
                rules.push(r);
            }
        }
        Ok(rules)
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionRule {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(FusionRule::Summation),
            "product" => Ok(FusionRule::Product),
            "max" => Ok(FusionRule::Maximum),
            _ => Err(FusionError::UnknownRule(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionDecision {
    pub predicted_class: usize,
    /// `s(c)` per class. For the product rule these are `exp` of the
    /// log-space scores and may underflow to zero; the decision itself is
    /// taken in log space.
    pub per_class_scores: Vec<f64>,
    pub rule: FusionRule,
    pub n_patches: usize,
}

pub fn fuse(
    patch_probs: &[ProbabilityVector],
    rule: FusionRule,
) -> Result<FusionDecision, FusionError> {
    let first = patch_probs.first().ok_or(FusionError::Empty)?;
    let k = first.len();
    for (index, p) in patch_probs.iter().enumerate() {
        if p.len() != k {
            return Err(FusionError::InconsistentLength {
                index,
                expected: k,
                found: p.len(),
            });
        }
    }

    let mut column = Vec::with_capacity(patch_probs.len());
    let mut decision_scores = Vec::with_capacity(k);
    let mut reported = Vec::with_capacity(k);
    for c in 0..k {
        column.clear();
        column.extend(patch_probs.iter().map(|p| p.as_slice()[c]));
        match rule {
            FusionRule::Summation => {
                let s = sorted_sum(&mut column);
                decision_scores.push(s);
                reported.push(s);
            }
            FusionRule::Product => {
                column.iter_mut().for_each(|p| *p = p.max(PROB_FLOOR).ln());
                let log_s = sorted_sum(&mut column);
                decision_scores.push(log_s);
                reported.push(log_s.exp());
            }
            FusionRule::Maximum => {
                let m = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                decision_scores.push(m);
                reported.push(m);
            }
        }
    }

    Ok(FusionDecision {
        predicted_class: crate::head::argmax(&decision_scores),
        per_class_scores: reported,
        rule,
        n_patches: patch_probs.len(),
    })
}

/// Fuses one set of patch predictions under several rules.
pub fn fuse_all(
    patch_probs: &[ProbabilityVector],
    rules: &[FusionRule],
) -> Result<Vec<FusionDecision>, FusionError> {
    rules.iter().map(|&r| fuse(patch_probs, r)).collect()
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}
