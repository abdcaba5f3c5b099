//! Pre-norm decoder-only transformer with learned positional embeddings.

use mgsr_autodiff::{Graph, Tensor, Var};

use super::{ModelConfig, NextTokenModel};
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::params::{normal_tensor, ParamSet};
use crate::prob::ProbVector;

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;
/// Sequences per forward pass during inference.
const INFER_BATCH: usize = 64;

// per-block parameter offsets
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;
const PER_BLOCK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLm {
    config: ModelConfig,
    params: ParamSet,
}

/// Expected `(name, shape)` of every parameter, in storage order.
pub fn parameter_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, m) = (c.d_model, c.d_ff, c.vocab_size);
    let mut out = vec![
        ("tok_emb".to_owned(), vec![m, d]),
        ("pos_emb".to_owned(), vec![c.context_len, d]),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("ln1.gamma"), vec![d]),
            (p("ln1.beta"), vec![d]),
            (p("attn.wq"), vec![d, d]),
            (p("attn.bq"), vec![d]),
            (p("attn.wk"), vec![d, d]),
            (p("attn.bk"), vec![d]),
            (p("attn.wv"), vec![d, d]),
            (p("attn.bv"), vec![d]),
            (p("attn.wo"), vec![d, d]),
            (p("attn.bo"), vec![d]),
            (p("ln2.gamma"), vec![d]),
            (p("ln2.beta"), vec![d]),
            (p("mlp.w1"), vec![d, f]),
            (p("mlp.b1"), vec![f]),
            (p("mlp.w2"), vec![f, d]),
            (p("mlp.b2"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.gamma".to_owned(), vec![d]),
        ("ln_f.beta".to_owned(), vec![d]),
        ("head.w".to_owned(), vec![d, m]),
        ("head.b".to_owned(), vec![m]),
    ]);
    out
}

impl TransformerLm {
    /// Seeded initialization: weights ~ N(0, 0.02), biases zero, layer-norm
    /// gains one.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamSet::new();
        for (name, shape) in parameter_layout(&config) {
            let t = if name.ends_with("gamma") {
                Tensor::full(&shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                normal_tensor(&mut rng, &shape, INIT_STD)
            };
            params.push(name, t);
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: expected {name} {shape:?}, found {pname} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(graph, trainable)
    }

    pub(crate) fn check_sequence(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if seq.len() > self.config.context_len {
            return Err(Error::ContextOverflow {
                len: seq.len(),
                context: self.config.context_len,
            });
        }
        if let Some(&id) = seq.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits `[rows.len(), vocab]` for the requested `(sequence, position)`
    /// pairs. Sequences are right-padded to a common length; causal masking
    /// keeps padding from influencing real positions.
    pub fn logits(
        &self,
        g: &mut Graph,
        vars: &[Var],
        seqs: &[&[usize]],
        rows: &[(usize, usize)],
    ) -> Result<Var> {
        for s in seqs {
            self.check_sequence(s)?;
        }
        let c = &self.config;
        let batch = seqs.len();
        let t_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(batch * t_len);
        let mut pos = Vec::with_capacity(batch * t_len);
        for s in seqs {
            for t in 0..t_len {
                ids.push(s.get(t).copied().unwrap_or(0));
                pos.push(t);
            }
        }
        let mut flat_rows = Vec::with_capacity(rows.len());
        for &(b, t) in rows {
            if b >= batch || t >= seqs[b].len() {
                return Err(Error::Invalid(format!("row ({b}, {t}) out of range")));
            }
            flat_rows.push(b * t_len + t);
        }

        let tok = g.embedding(vars[0], &ids)?;
        let pe = g.embedding(vars[1], &pos)?;
        let mut x = g.add(tok, pe)?;
        for l in 0..c.n_layers {
            let p = |k: usize| vars[2 + l * PER_BLOCK + k];
            let h = g.layer_norm(x, p(LN1_G), p(LN1_B), LN_EPS)?;
            let q = linear(g, h, p(WQ), p(BQ))?;
            let k = linear(g, h, p(WK), p(BK))?;
            let v = linear(g, h, p(WV), p(BV))?;
            let a = g.causal_attention(q, k, v, batch, t_len, c.n_heads)?;
            let a = linear(g, a, p(WO), p(BO))?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, p(LN2_G), p(LN2_B), LN_EPS)?;
            let h = linear(g, h, p(W1), p(B1))?;
            let h = g.gelu(h)?;
            let h = linear(g, h, p(W2), p(B2))?;
            x = g.add(x, h)?;
        }
        let tail = 2 + c.n_layers * PER_BLOCK;
        let x = g.select_rows(x, &flat_rows)?;
        let x = g.layer_norm(x, vars[tail], vars[tail + 1], LN_EPS)?;
        linear(g, x, vars[tail + 2], vars[tail + 3])
    }

    /// Next-token distribution at every position of `seq`.
    pub fn forward(&self, seq: &[usize]) -> Result<Vec<ProbVector>> {
        let rows: Vec<_> = (0..seq.len()).map(|t| (0, t)).collect();
        self.infer(&[seq], &rows)
    }

    fn infer(&self, seqs: &[&[usize]], rows: &[(usize, usize)]) -> Result<Vec<ProbVector>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let logits = self.logits(&mut g, &vars, seqs, rows)?;
        let probs = g.softmax(logits, 1)?;
        Ok(split_rows(g.value(probs), self.config.vocab_size))
    }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

pub(crate) fn split_rows(t: &Tensor, m: usize) -> Vec<ProbVector> {
    t.data()
        .chunks(m)
        .map(|r| ProbVector::from_softmax(r.to_vec()))
        .collect()
}

impl NextTokenModel for TransformerLm {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn next_dists(&self, prefixes: &[&[usize]]) -> Result<Vec<ProbVector>> {
        let mut out = Vec::with_capacity(prefixes.len());
        for chunk in prefixes.chunks(INFER_BATCH) {
            let rows: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(b, s)| (b, s.len().saturating_sub(1)))
                .collect();
            out.extend(self.infer(chunk, &rows)?);
        }
        Ok(out)
    }

    fn response_dists(&self, pairs: &[(&[usize], &[usize])]) -> Result<Vec<Vec<ProbVector>>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(INFER_BATCH) {
            let (seqs, rows) = response_rows(chunk)?;
            let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
            let mut flat = self.infer(&refs, &rows)?.into_iter();
            for (_, resp) in chunk {
                out.push(flat.by_ref().take(resp.len()).collect());
            }
        }
        Ok(out)
    }
}

/// Input sequences and output rows that score every response token:
/// the distribution for `response[i]` is read at position `prompt.len() - 1 + i`
/// of `prompt ++ response[..len-1]`.
pub(crate) fn response_rows(
    pairs: &[(&[usize], &[usize])],
) -> Result<(Vec<Vec<usize>>, Vec<(usize, usize)>)> {
    let mut seqs = Vec::with_capacity(pairs.len());
    let mut rows = Vec::new();
    for (b, (prompt, resp)) in pairs.iter().enumerate() {
        if prompt.is_empty() {
            return Err(Error::Invalid("empty prompt".into()));
        }
        let mut s = prompt.to_vec();
        if !resp.is_empty() {
            s.extend_from_slice(&resp[..resp.len() - 1]);
        }
        rows.extend((0..resp.len()).map(|i| (b, prompt.len() - 1 + i)));
        seqs.push(s);
    }
    Ok((seqs, rows))
}
