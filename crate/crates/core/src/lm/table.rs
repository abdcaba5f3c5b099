use std::collections::HashMap;

use super::NextTokenModel;
use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// A model defined by an explicit lookup table from full prefixes to
/// next-token distributions, with a fallback for unlisted prefixes.
///
/// Used to build deterministic fixtures with hand-picked divergences.
#[derive(Clone, Debug)]
pub struct TableLm {
    vocab_size: usize,
    context_len: usize,
    table: HashMap<Vec<usize>, ProbVector>,
    fallback: ProbVector,
}

impl TableLm {
    pub fn new(vocab_size: usize, context_len: usize, fallback: ProbVector) -> Result<Self> {
        if fallback.len() != vocab_size {
            return Err(Error::LengthMismatch {
                what: "table fallback",
                left: fallback.len(),
                right: vocab_size,
            });
        }
        Ok(Self {
            vocab_size,
            context_len,
            table: HashMap::new(),
            fallback,
        })
    }

    pub fn set(&mut self, prefix: &[usize], dist: ProbVector) -> Result<()> {
        if dist.len() != self.vocab_size {
            return Err(Error::LengthMismatch {
                what: "table entry",
                left: dist.len(),
                right: self.vocab_size,
            });
        }
        self.table.insert(prefix.to_vec(), dist);
        Ok(())
    }

    /// Places probability `peak` on `token` after `prefix`, spreading the rest
    /// evenly.
    pub fn set_peaked(&mut self, prefix: &[usize], token: usize, peak: f64) -> Result<()> {
        let rest = (1.0 - peak) / (self.vocab_size - 1) as f64;
        let mut v = vec![rest; self.vocab_size];
        v[token] = peak;
        self.set(prefix, ProbVector::new(v)?)
    }
}

impl NextTokenModel for TableLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn next_dists(&self, prefixes: &[&[usize]]) -> Result<Vec<ProbVector>> {
        prefixes
            .iter()
            .map(|p| {
                if p.len() > self.context_len {
                    return Err(Error::ContextOverflow {
                        len: p.len(),
                        context: self.context_len,
                    });
                }
                Ok(self.table.get(*p).unwrap_or(&self.fallback).clone())
            })
            .collect()
    }
}
