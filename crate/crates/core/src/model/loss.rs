use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};

use super::forward::VideoOutput;

/// Usage targets and the weight of the usage term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Target usage fractions of tier 1 and tier 2.
    pub gamma: [f64; 2],
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: [0.75, 0.96],
            lambda: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub usage: f64,
    /// Always `cross_entropy + lambda * usage`.
    pub total: f64,
    pub lambda: f64,
    pub gamma: [f64; 2],
    /// The usage fractions that entered the usage term.
    pub usage_fractions: [f64; 2],
}

impl LossBreakdown {
    fn assemble(cross_entropy: f64, usage_fractions: [f64; 2], weights: &LossWeights) -> Self {
        let usage = (usage_fractions[0] - weights.gamma[0]).powi(2) + (usage_fractions[1] - weights.gamma[1]).powi(2);
        LossBreakdown {
            cross_entropy,
            usage,
            total: cross_entropy + weights.lambda * usage,
            lambda: weights.lambda,
            gamma: weights.gamma,
            usage_fractions,
        }
    }
}

/// `L = -ln p[label] + λ·Σ_k (u_k - γ_k)²` from plain values.
pub fn compute_loss(
    probs: &[f64],
    label: usize,
    usage_fractions: [f64; 2],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(LossBreakdown::assemble(-probs[label].ln(), usage_fractions, weights))
}

/// Records the loss on the tape. Returns the scalar node to differentiate
/// and the value breakdown.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    out: &VideoOutput,
    label: usize,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let classes = tape.value(out.log_probs).len();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if out.usage.is_empty() {
        return Err(Error::EmptySequence);
    }
    let picked = tape.slice(out.log_probs, label, 1)?;
    let ce = tape.scale(picked, -1.0)?;

    let steps = out.usage.len() as f64;
    let mut terms = Vec::with_capacity(2);
    let mut fractions = [0.0; 2];
    for k in 0..2 {
        let per_step: Vec<Var> = out.usage.iter().map(|u| u[k]).collect();
        let all = tape.concat(&per_step)?;
        let total = tape.sum(all)?;
        let fraction = tape.scale(total, 1.0 / steps)?;
        fractions[k] = tape.value(fraction).item().as_f64();
        let target = tape.scalar(weights.gamma[k]);
        terms.push(tape.sq_diff(fraction, target)?);
    }
    let usage = tape.add(terms[0], terms[1])?;
    let weighted = tape.scale(usage, weights.lambda)?;
    let total = tape.add(ce, weighted)?;

    let breakdown = LossBreakdown::assemble(tape.value(ce).item().as_f64(), fractions, weights);
    Ok((total, breakdown))
}
