//! Greedy and seeded-sampling decoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NextTokenModel;
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::prob::ProbVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Argmax, ties to the smallest token id.
    Greedy,
    /// Draw from the distribution sharpened or flattened by `temperature`.
    Sample { temperature: f64 },
}

impl DecodeMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecodeMode::Sample { temperature } if !(temperature > 0.0) => Err(Error::OutOfRange {
                name: "temperature",
                value: temperature,
            }),
            _ => Ok(()),
        }
    }
}

pub fn pick_token(dist: &ProbVector, mode: DecodeMode, rng: &mut impl Rng) -> Result<usize> {
    mode.validate()?;
    match mode {
        DecodeMode::Greedy => Ok(dist.argmax()),
        DecodeMode::Sample { temperature } => {
            let inv = 1.0 / temperature;
            let weights: Vec<f64> = dist
                .values()
                .iter()
                .map(|&p| if p > 0.0 { p.powf(inv) } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Ok(dist.argmax());
            }
            let mut u = rng.random::<f64>() * total;
            let mut last = 0;
            for (k, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    last = k;
                    if u < w {
                        return Ok(k);
                    }
                    u -= w;
                }
            }
            Ok(last)
        }
    }
}

/// Next token after `prefix`, reproducible for a fixed `seed`.
pub fn next_token<M: NextTokenModel + ?Sized>(
    model: &M,
    prefix: &[usize],
    mode: DecodeMode,
    seed: u64,
) -> Result<usize> {
    mode.validate()?;
    let dist = model.next_dists(&[prefix])?.remove(0);
    pick_token(&dist, mode, &mut seeded_rng(seed))
}

/// One decoding job: continue `prompt ++ response_prefix` until `stop` or
/// until the response holds `max_len` tokens.
#[derive(Clone, Debug)]
pub struct GenRequest {
    pub prompt: Vec<usize>,
    pub response_prefix: Vec<usize>,
    pub max_len: usize,
    pub seed: u64,
}

impl GenRequest {
    pub fn new(prompt: Vec<usize>, max_len: usize, seed: u64) -> Self {
        Self {
            prompt,
            response_prefix: Vec::new(),
            max_len,
            seed,
        }
    }
}

struct Job {
    seq: Vec<usize>,
    prompt_len: usize,
    limit: usize,
    rng: ChaCha8Rng,
    done: bool,
}

/// Decodes all requests together; each request draws from its own seeded
/// generator so results do not depend on batch composition. The returned
/// responses include the stop token when it was emitted.
pub fn generate_batch<M: NextTokenModel + ?Sized>(
    model: &M,
    requests: &[GenRequest],
    mode: DecodeMode,
    stop: usize,
) -> Result<Vec<Vec<usize>>> {
    mode.validate()?;
    let ctx = model.context_len();
    let mut jobs: Vec<Job> = requests
        .iter()
        .map(|r| {
            let mut seq = r.prompt.clone();
            seq.extend_from_slice(&r.response_prefix);
            let limit = r.max_len.min(ctx.saturating_sub(r.prompt.len()));
            let done = r.response_prefix.len() >= limit || r.response_prefix.last() == Some(&stop);
            Job {
                seq,
                prompt_len: r.prompt.len(),
                limit,
                rng: seeded_rng(r.seed),
                done,
            }
        })
        .collect();
    loop {
        let active: Vec<usize> = (0..jobs.len()).filter(|&i| !jobs[i].done).collect();
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<&[usize]> = active.iter().map(|&i| jobs[i].seq.as_slice()).collect();
        let dists = model.next_dists(&prefixes)?;
        for (&i, dist) in active.iter().zip(&dists) {
            let job = &mut jobs[i];
            let tok = pick_token(dist, mode, &mut job.rng)?;
            job.seq.push(tok);
            if tok == stop || job.seq.len() - job.prompt_len >= job.limit {
                job.done = true;
            }
        }
    }
    Ok(jobs
        .into_iter()
        .map(|j| j.seq[j.prompt_len..].to_vec())
        .collect())
}

/// Single-prompt convenience wrapper around [`generate_batch`].
pub fn generate<M: NextTokenModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    max_len: usize,
    mode: DecodeMode,
    stop: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let req = GenRequest::new(prompt.to_vec(), max_len, seed);
    Ok(generate_batch(model, &[req], mode, stop)?.remove(0))
}
