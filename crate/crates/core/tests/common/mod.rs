//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mgsr_autodiff::Tensor;
use mgsr_core::data::{seeded_rng, Example, Vocab};
use mgsr_core::eval::{gen_synthetic_corpus, GrammarConfig};
use mgsr_core::lm::ModelConfig;
use mgsr_core::spans::{Lexicon, SpanAnnotation};
use mgsr_core::trainer::TrainData;
use mgsr_core::ProbVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

/// Logits with entries uniform in `[-scale, scale]`.
pub fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> ProbVector {
    ProbVector::new(softmax(&random_logits(rng, m, 3.0))).unwrap()
}

pub fn pv(v: &[f64]) -> ProbVector {
    ProbVector::new(v.to_vec()).unwrap()
}

/// Σ p ln(p/q) by direct summation, skipping zero-mass terms of `p`.
pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn renormalized(v: &[f64], keep: &[usize]) -> Vec<f64> {
    let total: f64 = keep.iter().map(|&k| v[k]).sum();
    keep.iter().map(|&k| v[k] / total).collect()
}

pub fn rows_tensor(rows: &[ProbVector]) -> Tensor {
    let m = rows[0].len();
    let data: Vec<f64> = rows.iter().flat_map(|r| r.values().to_vec()).collect();
    Tensor::new(vec![rows.len(), m], data).unwrap()
}

/// Longest common subsequence by recursion with memoization, written
/// independently of the library's table.
pub fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut BTreeMap::new())
}

/// A synthetic-grammar corpus split into train, validation and test.
pub struct Toy {
    pub vocab: Vocab,
    pub lexicon: Lexicon,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub spans: BTreeMap<u64, SpanAnnotation>,
}

impl Toy {
    pub fn new(seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Self {
        let grammar = GrammarConfig::default();
        let pool = gen_synthetic_corpus(seed, n_train + n_val, &grammar);
        let test = gen_synthetic_corpus(seed.wrapping_add(1_000_003), n_test, &grammar);
        let mut examples = pool.corpus.examples;
        let validation = examples.split_off(n_train);
        Self {
            vocab: pool.vocab,
            lexicon: pool.lexicon,
            train: examples,
            validation,
            test: test.corpus.examples,
            spans: pool.spans.into_iter().map(|a| (a.sample_id, a)).collect(),
        }
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            validation: &self.validation,
            spans: Some(&self.spans),
            lexicon: Some(&self.lexicon),
            eos: self.vocab.eos(),
            pad: self.vocab.pad(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

/// A very small transformer for fast training tests.
pub fn tiny_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        context_len: 32,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        seed,
    }
}
