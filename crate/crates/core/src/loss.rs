//! Contrastive objectives with a learnable temperature and an additive margin
//! on the positive logit.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Initial temperature; the trainable parameter is `ln τ`.
    pub tau_init: f64,
    /// Additive margin `γ` subtracted from the positive similarity.
    pub margin: f64,
    /// Weight `β` of the structural loss.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_init: 0.05,
            margin: 0.02,
            beta: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(TAU_MIN..=TAU_MAX).contains(&self.tau_init) {
            return Err(Error::Config(alloc::format!(
                "initial temperature {} outside [{TAU_MIN}, {TAU_MAX}]",
                self.tau_init
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(alloc::format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(alloc::format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Clamps a log-temperature so that `τ ∈ [0.01, 1]`.
pub fn clamp_log_tau(log_tau: f64) -> f64 {
    log_tau.clamp(libm::log(TAU_MIN), libm::log(TAU_MAX))
}

/// `1/τ = exp(−ln τ)` as a differentiable scalar.
pub fn inverse_temperature(tape: &mut Tape, log_tau: Var) -> Var {
    let neg = tape.scale(log_tau, -1.0);
    tape.exp(neg)
}

/// `1/τ` for a fixed temperature.
pub fn fixed_inverse_temperature(tape: &mut Tape, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Temperature(tau));
    }
    Ok(tape.constant(Tensor::scalar(1.0 / tau)))
}

/// InfoNCE with an additive margin, averaged over rows.
///
/// `sims` is an `m × n` similarity matrix; `positives[q]` names the column of
/// row `q`'s positive. `negatives` is a row-major `m × n` mask of the entries
/// allowed into the negative sum. Per row:
///
/// `−log( e^{(s⁺−γ)/τ} / (e^{(s⁺−γ)/τ} + Σ_{neg} e^{s/τ}) )`
pub fn contrastive_loss(
    tape: &mut Tape,
    sims: Var,
    positives: &[usize],
    negatives: &[bool],
    inv_tau: Var,
    margin: f64,
) -> Result<Var> {
    let [m, n] = tape.value(sims).shape();
    if positives.len() != m || negatives.len() != m * n {
        return Err(Error::Shape(alloc::format!(
            "loss inputs disagree: sims [{m}, {n}], {} positives, mask of {}",
            positives.len(),
            negatives.len()
        )));
    }
    let mut shift = Tensor::zeros(m, n);
    let mut include = negatives.to_vec();
    let mut at = Vec::with_capacity(m);
    for (q, &p) in positives.iter().enumerate() {
        if p >= n {
            return Err(Error::Shape(alloc::format!("positive column {p} out of range {n}")));
        }
        shift.set(q, p, -margin);
        include[q * n + p] = true;
        at.push((q, p));
    }
    let shift = tape.constant(shift);
    let shifted = tape.add(sims, shift)?;
    let logits = tape.mul_scalar(shifted, inv_tau)?;
    let lse = tape.masked_logsumexp_rows(logits, &include)?;
    let pos = tape.pick(logits, &at);
    let per_row = tape.sub(lse, pos)?;
    Ok(tape.mean(per_row))
}

/// Structural loss over a `B × B'` score matrix of `cos(ASE(h, r), E_t)`.
/// Same functional form as [`contrastive_loss`], with in-batch negatives only.
pub fn structural_loss(
    tape: &mut Tape,
    scores: Var,
    positives: &[usize],
    negatives: &[bool],
    inv_tau: Var,
    margin: f64,
) -> Result<Var> {
    contrastive_loss(tape, scores, positives, negatives, inv_tau, margin)
}

/// `L = L_cl + β·L_dis`.
pub fn total_loss(tape: &mut Tape, l_cl: Var, l_dis: Var, beta: f64) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(Error::Config(alloc::format!("beta must be >= 0, got {beta}")));
    }
    let weighted = tape.scale(l_dis, beta);
    tape.add(l_cl, weighted)
}

/// Convenience for a single query given as plain numbers.
pub fn single_query_loss(positive: f64, negatives: &[f64], tau: f64, margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let mut row = vec![positive];
    row.extend_from_slice(negatives);
    let n = row.len();
    let sims = tape.constant(Tensor::row_vector(row));
    let mut mask = vec![true; n];
    mask[0] = false;
    let inv = fixed_inverse_temperature(&mut tape, tau)?;
    let l = contrastive_loss(&mut tape, sims, &[0], &mask, inv, margin)?;
    Ok(tape.value(l).item())
}
