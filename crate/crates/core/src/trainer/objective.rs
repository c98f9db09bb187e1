//! The verification, auxiliary and joint objectives.
//!
//! ```text
//! L_v = - sum_i sum_j w_ij * (y_i ln p_ij + (1 - y_i) ln(1 - p_ij))
//! L_m = - sum_i sum_c y_i^c ln p_i^c
//! L   = alpha / (N_v * k) * L_v + (1 - alpha) / N_m * L_m
//! ```
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of one prediction against a 0/1 label.
pub fn bce(label: u8, p: f64) -> f64 {
    let p = clamp_prob(p);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d bce / d p; zero where the clamp is active.
pub fn bce_grad_wrt_prob(label: u8, p: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    if label == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// One `(y_i, p_ij, w_ij)` term of the verification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationRecord {
    pub label: u8,
    pub prob: f64,
    pub weight: f64,
}

/// Predicted distribution over the vocabulary at one masked position and
/// the index of the gold token.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRecord {
    pub probs: Vec<f64>,
    pub target: usize,
}

pub fn verification_loss(records: &[VerificationRecord]) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        if r.label > 1 {
            return Err(Error::Integrity(format!("label {} is not 0/1", r.label)));
        }
        if !(r.weight > 0.0 && r.weight <= 1.0) {
            return Err(Error::Integrity(format!("weight {} outside (0, 1]", r.weight)));
        }
        let y = f64::from(r.label);
        let p = clamp_prob(r.prob);
        total -= r.weight * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("verification loss = {total}")));
    }
    Ok(total)
}

pub fn auxiliary_loss(records: &[MaskedRecord]) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        if r.target >= r.probs.len() {
            return Err(Error::Index { index: r.target, len: r.probs.len() });
        }
        // one-hot target: only the gold token's term survives
        total -= clamp_prob(r.probs[r.target]).ln();
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("auxiliary loss = {total}")));
    }
    Ok(total)
}

/// `alpha / (n_v * k) * lv + (1 - alpha) / n_m * lm`. A term whose
/// coefficient is zero contributes exactly zero.
pub fn joint_loss(lv: f64, lm: f64, alpha: f64, n_v: usize, k: usize, n_m: usize) -> f64 {
    let verify = if alpha == 0.0 { 0.0 } else { alpha / (n_v as f64 * k as f64) * lv };
    let aux = if alpha == 1.0 { 0.0 } else { (1.0 - alpha) / n_m as f64 * lm };
    verify + aux
}
