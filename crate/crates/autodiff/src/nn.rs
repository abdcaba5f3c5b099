//! Fused neural-network operations: embedding lookup, layer norm, GELU and
//! causal multi-head attention.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn layer_norm_backward(
    g: &[f64],
    gamma: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gx: &mut [f64],
) {
    let d = gamma.len();
    let mut dxhat = vec![0.0; d];
    for (r, chunk) in g.chunks(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..d {
            dxhat[c] = chunk[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        for c in 0..d {
            gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
}

pub(crate) struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub width: usize,
}

impl AttnDims {
    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns (output, attention probabilities laid out `[batch, heads, seq, seq]`).
fn attention_forward(dims: &AttnDims, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (t_len, w, dh) = (dims.seq, dims.width, dims.head_dim());
    let scale = dims.scale();
    let mut out = vec![0.0; dims.batch * t_len * w];
    let mut probs = vec![0.0; dims.batch * dims.heads * t_len * t_len];
    let mut scores = vec![0.0; t_len];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let col = h * dh;
            for t in 0..t_len {
                let qrow = &q[(b * t_len + t) * w + col..][..dh];
                let mut max = f64::NEG_INFINITY;
                for s in 0..=t {
                    let krow = &k[(b * t_len + s) * w + col..][..dh];
                    scores[s] = dot(qrow, krow) * scale;
                    max = max.max(scores[s]);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut().take(t + 1) {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let p_row = &mut probs[((b * dims.heads + h) * t_len + t) * t_len..][..t_len];
                let o_row = &mut out[(b * t_len + t) * w + col..][..dh];
                for s in 0..=t {
                    let p = scores[s] / denom;
                    p_row[s] = p;
                    let vrow = &v[(b * t_len + s) * w + col..][..dh];
                    for c in 0..dh {
                        o_row[c] += p * vrow[c];
                    }
                }
            }
        }
    }
    (out, probs)
}

pub(crate) fn attention_backward(
    dims: &AttnDims,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (t_len, w, dh) = (dims.seq, dims.width, dims.head_dim());
    let scale = dims.scale();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; t_len];
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let col = h * dh;
            for t in 0..t_len {
                let p_row = &probs[((b * dims.heads + h) * t_len + t) * t_len..][..t_len];
                let go = &g[(b * t_len + t) * w + col..][..dh];
                let mut weighted = 0.0;
                for s in 0..=t {
                    let voff = (b * t_len + s) * w + col;
                    dp[s] = dot(go, &v[voff..voff + dh]);
                    weighted += p_row[s] * dp[s];
                    for c in 0..dh {
                        dv[voff + c] += p_row[s] * go[c];
                    }
                }
                let qoff = (b * t_len + t) * w + col;
                for s in 0..=t {
                    let ds = p_row[s] * (dp[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = (b * t_len + s) * w + col;
                    for c in 0..dh {
                        dq[qoff + c] += ds * k[koff + c];
                        dk[koff + c] += ds * q[qoff + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

impl Graph {
    /// Rows of `table` (`[vocab, width]`) selected by `ids`, giving `[ids.len(), width]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(AutodiffError::Invalid(format!(
                "embedding table must be rank 2, got {shape:?}"
            )));
        }
        let (rows, d) = (shape[0], shape[1]);
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    index: id,
                    extent: rows,
                });
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.requires_grad(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(AutodiffError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape(x).to_vec(),
                right: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * gv[c] + bv[c];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Gelu(a), rg))
    }

    /// Causal multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * seq, width]` with rows grouped by sequence;
    /// `width` must divide evenly by `heads`. Position `t` attends to
    /// positions `0..=t` of its own sequence only.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(AutodiffError::ShapeMismatch {
                op: "causal_attention",
                left: shape,
                right: self.shape(k).to_vec(),
            });
        }
        if shape.len() != 2 || shape[0] != batch * seq || heads == 0 || shape[1] % heads != 0 {
            return Err(AutodiffError::Invalid(format!(
                "causal_attention: shape {shape:?} incompatible with batch {batch}, seq {seq}, heads {heads}"
            )));
        }
        let dims = AttnDims {
            batch,
            seq,
            heads,
            width: shape[1],
        };
        let (out, probs) = attention_forward(
            &dims,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad(q) || self.requires_grad(k) || self.requires_grad(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }
}
