//! Multi-seed generation and scoring.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rouge::{rouge_l, RougeScore};
use crate::data::{derive_seed, Example};
use crate::error::{Error, Result};
use crate::lm::{generate_batch, DecodeMode, GenRequest, NextTokenModel};

pub const DEFAULT_SEEDS: [u64; 5] = [10, 20, 30, 40, 50];

/// Score of one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub prompt_id: u64,
    pub seed: u64,
    pub hypothesis: Vec<usize>,
    pub reference: Vec<usize>,
    pub scores: RougeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub score: RougeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub per_seed: Vec<SeedScore>,
    /// Mean of the per-seed means.
    pub mean: RougeScore,
    #[serde(skip)]
    pub records: Vec<EvalRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: DecodeMode,
    pub max_len: usize,
    pub eos: usize,
    pub pad: usize,
}

/// Generates a response for every example under every seed and scores it
/// against the reference, ignoring `eos` and `pad` tokens. The generation
/// for example `i` under seed `s` is seeded with `derive_seed(s, [i])`.
pub fn evaluate_multiseed<M: NextTokenModel + ?Sized>(
    model: &M,
    examples: &[Example],
    seeds: &[u64],
    cfg: &EvalConfig,
) -> Result<MultiSeedReport> {
    if examples.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Invalid("no evaluation seeds".into()));
    }
    let clean = |ids: &[usize]| -> Vec<usize> {
        ids.iter().copied().filter(|&t| t != cfg.eos && t != cfg.pad).collect()
    };
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut records = Vec::with_capacity(seeds.len() * examples.len());
    for &seed in seeds {
        let reqs: Vec<GenRequest> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| GenRequest::new(ex.prompt.clone(), cfg.max_len, derive_seed(seed, &[i as u64])))
            .collect();
        let outs = generate_batch(model, &reqs, cfg.mode, cfg.eos)?;
        let mut scores = Vec::with_capacity(examples.len());
        for (ex, out) in examples.iter().zip(outs) {
            let hypothesis = clean(&out);
            let reference = clean(&ex.response);
            let s = rouge_l(&hypothesis, &reference);
            scores.push(s);
            records.push(EvalRecord {
                prompt_id: ex.id,
                seed,
                hypothesis,
                reference,
                scores: s,
            });
        }
        per_seed.push(SeedScore {
            seed,
            score: RougeScore::mean(&scores),
        });
    }
    let mean = RougeScore::mean(&per_seed.iter().map(|s| s.score).collect::<Vec<_>>());
    Ok(MultiSeedReport {
        per_seed,
        mean,
        records,
    })
}

/// One JSON object per record; `decode` turns token ids into text.
pub fn write_eval_dump(path: &Path, records: &[EvalRecord], decode: impl Fn(&[usize]) -> String) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        prompt_id: u64,
        seed: u64,
        hypothesis: String,
        reference: String,
        scores: &'a RougeScore,
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = Line {
            prompt_id: r.prompt_id,
            seed: r.seed,
            hypothesis: decode(&r.hypothesis),
            reference: decode(&r.reference),
            scores: &r.scores,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
