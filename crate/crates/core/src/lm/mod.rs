//! Autoregressive language models: the transformer used as teacher and
//! student, a table-driven model for fixtures, and decoding.

mod config;
mod generate;
mod table;
mod transformer;

pub use config::ModelConfig;
pub use generate::{generate, generate_batch, next_token, pick_token, DecodeMode, GenRequest};
pub use table::TableLm;
pub use transformer::{parameter_layout, TransformerLm};

pub(crate) use transformer::response_rows;

use crate::error::Result;
use crate::prob::ProbVector;

/// Anything that yields next-token distributions for token prefixes.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;

    fn context_len(&self) -> usize;

    /// Distribution over the token following each prefix.
    fn next_dists(&self, prefixes: &[&[usize]]) -> Result<Vec<ProbVector>>;

    /// For every `(prompt, response)` pair, the distributions that predict
    /// each response token from `prompt ++ response[..i]`.
    fn response_dists(&self, pairs: &[(&[usize], &[usize])]) -> Result<Vec<Vec<ProbVector>>> {
        let mut prefixes = Vec::new();
        for (prompt, resp) in pairs {
            for i in 0..resp.len() {
                let mut p = prompt.to_vec();
                p.extend_from_slice(&resp[..i]);
                prefixes.push(p);
            }
        }
        let refs: Vec<&[usize]> = prefixes.iter().map(Vec::as_slice).collect();
        let mut flat = self.next_dists(&refs)?.into_iter();
        Ok(pairs
            .iter()
            .map(|(_, resp)| flat.by_ref().take(resp.len()).collect())
            .collect())
    }
}
