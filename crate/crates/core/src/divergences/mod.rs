//! Distillation objectives.
//!
//! Each divergence exists twice: as a direct summation over [`ProbVector`]s
//! (used for reporting and as a reference), and as a differentiable graph
//! expression over `[positions, vocab]` tensors (used for training).

mod batch;
mod dac;
mod objective;
mod span;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{divergence_rows, kl_rows};
pub use dac::{
    clipped_kl_rows, dac_clip, dac_clip_with, dac_kl_loss, dac_kl_sequence, dac_kl_with_quantiles,
    predict_quantiles, ClipMode, ClipSelection, DacComponents, QuantilePair, SubNetwork,
};
pub use objective::{
    nll_rows, overall_loss, sft_loss, weighted_total, LossParts, LossWeights,
};
pub use span::{span_correlation_loss, span_loss_graph, SpanPair};

use crate::error::{Error, Result};
use crate::prob::{check_simplex, ProbVector};

/// Floor applied inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Selectable token-level distillation objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Fkl,
    Rkl,
    Skl,
    Jsd,
    Tvd,
    Sfkl,
    Srkl,
    Dackl,
}

impl Divergence {
    pub const ALL: [Divergence; 8] = [
        Divergence::Fkl,
        Divergence::Rkl,
        Divergence::Skl,
        Divergence::Jsd,
        Divergence::Tvd,
        Divergence::Sfkl,
        Divergence::Srkl,
        Divergence::Dackl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Divergence::Fkl => "fkl",
            Divergence::Rkl => "rkl",
            Divergence::Skl => "skl",
            Divergence::Jsd => "jsd",
            Divergence::Tvd => "tvd",
            Divergence::Sfkl => "sfkl",
            Divergence::Srkl => "srkl",
            Divergence::Dackl => "dackl",
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Divergence {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Divergence::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown loss {s:?}"))
    }
}

/// Mixing coefficients of the skew and Jensen-Shannon baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceParams {
    /// Skew coefficient for SFKL / SRKL.
    pub alpha: f64,
    /// Mixture weight for generalized JSD.
    pub beta: f64,
}

impl Default for DivergenceParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
        }
    }
}

impl DivergenceParams {
    pub fn validate(&self) -> Result<()> {
        check_open_unit("alpha", self.alpha)?;
        check_open_unit("beta", self.beta)
    }
}

fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value })
    }
}

fn check_pair(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "distribution pair",
            left: p.len(),
            right: q.len(),
        });
    }
    check_simplex(p.values())?;
    check_simplex(q.values())
}

/// Σ p (ln p − ln q) over raw slices, logs floored at [`LOG_EPS`].
pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(LOG_EPS).ln() - b.max(LOG_EPS).ln()))
        .sum()
}

fn mixture(p: &[f64], q: &[f64], w: f64) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| w * a + (1.0 - w) * b).collect()
}

/// KL(p ‖ q).
pub fn forward_kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_pair(p, q)?;
    Ok(kl_slices(p.values(), q.values()))
}

/// KL(q ‖ p).
pub fn reverse_kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    forward_kl(q, p)
}

/// Mean of forward and reverse KL.
pub fn symmetric_kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    Ok(0.5 * (forward_kl(p, q)? + reverse_kl(p, q)?))
}

/// β·KL(p ‖ m) + (1−β)·KL(q ‖ m) with m = βp + (1−β)q.
pub fn jsd(p: &ProbVector, q: &ProbVector, beta: f64) -> Result<f64> {
    check_open_unit("beta", beta)?;
    check_pair(p, q)?;
    let m = mixture(p.values(), q.values(), beta);
    Ok(beta * kl_slices(p.values(), &m) + (1.0 - beta) * kl_slices(q.values(), &m))
}

/// Half the L1 distance.
pub fn tvd(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// KL(p ‖ αp + (1−α)q).
pub fn skew_forward_kl(p: &ProbVector, q: &ProbVector, alpha: f64) -> Result<f64> {
    check_open_unit("alpha", alpha)?;
    check_pair(p, q)?;
    Ok(kl_slices(p.values(), &mixture(p.values(), q.values(), alpha)))
}

/// KL(q ‖ αq + (1−α)p).
pub fn skew_reverse_kl(p: &ProbVector, q: &ProbVector, alpha: f64) -> Result<f64> {
    check_open_unit("alpha", alpha)?;
    check_pair(p, q)?;
    Ok(kl_slices(q.values(), &mixture(q.values(), p.values(), alpha)))
}

/// Any baseline divergence between teacher `p` and student `q`.
/// `Dackl` is not a fixed function of the pair and is rejected here.
pub fn divergence(kind: Divergence, p: &ProbVector, q: &ProbVector, params: DivergenceParams) -> Result<f64> {
    match kind {
        Divergence::Fkl => forward_kl(p, q),
        Divergence::Rkl => reverse_kl(p, q),
        Divergence::Skl => symmetric_kl(p, q),
        Divergence::Jsd => jsd(p, q, params.beta),
        Divergence::Tvd => tvd(p, q),
        Divergence::Sfkl => skew_forward_kl(p, q, params.alpha),
        Divergence::Srkl => skew_reverse_kl(p, q, params.alpha),
        Divergence::Dackl => Err(Error::Invalid(
            "dackl needs a sub-network; use dac_kl_loss".into(),
        )),
    }
}
