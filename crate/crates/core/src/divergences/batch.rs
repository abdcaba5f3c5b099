//! Row-wise divergences as differentiable graph expressions.
//!
//! Inputs are `[N, M]` probability tensors (teacher `p`, student `q`); the
//! result is an `[N]` vector with one divergence per row.

use mgsr_autodiff::{Graph, Var};

use super::{check_open_unit, Divergence, DivergenceParams};
use crate::error::{Error, Result};

/// Σ_k p log(p / q) per row.
pub fn kl_rows(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    let lp = g.log(p)?;
    let lq = g.log(q)?;
    let d = g.sub(lp, lq)?;
    let t = g.mul(p, d)?;
    Ok(g.sum(t, Some(1))?)
}

fn mix(g: &mut Graph, a: Var, b: Var, w: f64) -> Result<Var> {
    let wa = g.scale(a, w)?;
    let wb = g.scale(b, 1.0 - w)?;
    Ok(g.add(wa, wb)?)
}

/// Row-wise baseline divergence between teacher `p` and student `q`.
pub fn divergence_rows(
    g: &mut Graph,
    kind: Divergence,
    p: Var,
    q: Var,
    params: DivergenceParams,
) -> Result<Var> {
    if g.shape(p) != g.shape(q) || g.shape(p).len() != 2 {
        return Err(Error::Invalid(format!(
            "divergence inputs must be matching [N, M] tensors, got {:?} and {:?}",
            g.shape(p),
            g.shape(q)
        )));
    }
    match kind {
        Divergence::Fkl => kl_rows(g, p, q),
        Divergence::Rkl => kl_rows(g, q, p),
        Divergence::Skl => {
            let f = kl_rows(g, p, q)?;
            let r = kl_rows(g, q, p)?;
            let s = g.add(f, r)?;
            Ok(g.scale(s, 0.5)?)
        }
        Divergence::Jsd => {
            let beta = params.beta;
            check_open_unit("beta", beta)?;
            let m = mix(g, p, q, beta)?;
            let a = kl_rows(g, p, m)?;
            let b = kl_rows(g, q, m)?;
            mix(g, a, b, beta)
        }
        Divergence::Tvd => {
            let d = g.sub(p, q)?;
            let a = g.abs(d)?;
            let s = g.sum(a, Some(1))?;
            Ok(g.scale(s, 0.5)?)
        }
        Divergence::Sfkl => {
            check_open_unit("alpha", params.alpha)?;
            let m = mix(g, p, q, params.alpha)?;
            kl_rows(g, p, m)
        }
        Divergence::Srkl => {
            check_open_unit("alpha", params.alpha)?;
            let m = mix(g, q, p, params.alpha)?;
            kl_rows(g, q, m)
        }
        Divergence::Dackl => Err(Error::Invalid(
            "dackl rows need a sub-network; use clipped_kl_rows".into(),
        )),
    }
}
