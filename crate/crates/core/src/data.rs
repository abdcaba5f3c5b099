//! Vocabulary and instruction/response corpora.
//!
//! A vocabulary file holds one token per line; the token id is the line
//! index. A corpus file holds one `prompt<TAB>response` pair per line, both
//! sides whitespace-separated vocabulary tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary; `<pad>` and `<eos>` must be present.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::VocabMismatch(format!("invalid token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::VocabMismatch(format!("duplicate token {t:?}")));
            }
        }
        for special in [PAD, EOS] {
            if !index.contains_key(special) {
                return Err(Error::VocabMismatch(format!("missing {special} token")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> usize {
        self.index[PAD]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn encode(&self, text: &str) -> std::result::Result<Vec<usize>, String> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| format!("unknown token {w:?}")))
            .collect()
    }

    /// Token strings for `ids`, dropping `<eos>` and `<pad>`.
    pub fn decode_words(&self, ids: &[usize]) -> Vec<String> {
        let (pad, eos) = (self.pad(), self.eos());
        ids.iter()
            .filter(|&&id| id != pad && id != eos)
            .map(|&id| self.token(id).unwrap_or("<?>").to_owned())
            .collect()
    }
}

/// One instruction/response pair. `response` excludes the end-of-sequence
/// token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

impl Example {
    /// Training target: the response followed by `eos`.
    pub fn target(&self, eos: usize) -> Vec<usize> {
        let mut t = self.response.clone();
        t.push(eos);
        t
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub examples: Vec<Example>,
}

impl Corpus {
    /// Parses a corpus file; sample ids are 0-based line numbers.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab, &path.display().to_string())
    }

    pub fn parse(text: &str, vocab: &Vocab, origin: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_owned(),
                line: lineno + 1,
                msg,
            };
            let (prompt, response) = line
                .split_once('\t')
                .ok_or_else(|| err("expected prompt<TAB>response".into()))?;
            let prompt = vocab.encode(prompt).map_err(|m| err(m))?;
            let response = vocab.encode(response).map_err(|m| err(m))?;
            if prompt.is_empty() {
                return Err(err("empty prompt".into()));
            }
            examples.push(Example {
                id: lineno as u64,
                prompt,
                response,
            });
        }
        Ok(Self { examples })
    }

    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&vocab.decode_words(&ex.prompt).join(" "));
            out.push('\t');
            out.push_str(&vocab.decode_words(&ex.response).join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Splits off the trailing `fraction` of examples as a validation set.
    pub fn split_validation(&self, fraction: f64) -> Result<(Vec<Example>, Vec<Example>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::OutOfRange {
                name: "validation_fraction",
                value: fraction,
            });
        }
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        let n_val = n_val.clamp(1, self.len().saturating_sub(1).max(1));
        let cut = self.len() - n_val;
        Ok((self.examples[..cut].to_vec(), self.examples[cut..].to_vec()))
    }

    /// Longest `prompt + response + eos`.
    pub fn max_sequence_len(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.prompt.len() + e.response.len() + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Mixes a base seed with a path of integers into an independent seed
/// (SplitMix64 finalizer over each component).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = base;
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
