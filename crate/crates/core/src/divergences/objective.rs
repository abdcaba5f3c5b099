//! Supervised fine-tuning loss and the weighted overall objective.

use mgsr_autodiff::{Graph, Var};
use serde::{Deserialize, Serialize};

use super::LOG_EPS;
use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// Mean negative log-likelihood of `targets`, probabilities floored at 1e-12.
pub fn sft_loss(model_dists: &[ProbVector], targets: &[usize]) -> Result<f64> {
    if model_dists.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "distributions/targets",
            left: model_dists.len(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (d, &t) in model_dists.iter().zip(targets) {
        let p = *d.values().get(t).ok_or(Error::TokenOutOfRange { id: t, vocab: d.len() })?;
        total -= p.max(LOG_EPS).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Per-row negative log-likelihood `[R]` from `[R, M]` logits.
pub fn nll_rows(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let lp = g.log_softmax(logits, 1)?;
    let picked = g.gather_last(lp, targets)?;
    Ok(g.neg(picked)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sft: f64,
    pub dac: f64,
    pub span: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sft: 1.0,
            dac: 1.0,
            span: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(sft: f64, dac: f64, span: f64) -> Result<Self> {
        let w = Self { sft, dac, span };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_sft", self.sft), ("w_dac", self.dac), ("w_span", self.span)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        Ok(())
    }
}

/// Values of the three loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sft: f64,
    pub dac: f64,
    pub span: f64,
}

/// `w_sft·sft + w_dac·dac + w_span·span`; a NaN term is reported by name.
/// Terms with zero weight are not evaluated into the sum.
pub fn overall_loss(parts: LossParts, weights: LossWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (name, v, w) in [
        ("sft", parts.sft, weights.sft),
        ("dac", parts.dac, weights.dac),
        ("span", parts.span, weights.span),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name, step: 0 });
        }
        if w != 0.0 {
            total += w * v;
        }
    }
    Ok(total)
}

/// Graph counterpart of [`overall_loss`]: scalar terms that are `None` or
/// carry zero weight are left out entirely.
pub fn weighted_total(
    g: &mut Graph,
    terms: [(Option<Var>, f64); 3],
) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for (v, w) in terms {
        let Some(v) = v else { continue };
        if w == 0.0 {
            continue;
        }
        let wv = if w == 1.0 { v } else { g.scale(v, w)? };
        total = Some(match total {
            None => wv,
            Some(t) => g.add(t, wv)?,
        });
    }
    Ok(total)
}
