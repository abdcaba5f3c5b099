//! Scoring, evaluation protocol, synthetic data and density export.

mod corpus;
mod density;
mod multiseed;
mod rouge;

pub use corpus::{gen_synthetic_corpus, grammar_vocab, write_dataset, DatasetFiles, GrammarConfig, SyntheticCorpus};
pub use density::{export_density, silverman_bandwidth, trapezoid, DensityExport, MIN_GRID};
pub use multiseed::{
    evaluate_multiseed, write_eval_dump, EvalConfig, EvalRecord, MultiSeedReport, SeedScore, DEFAULT_SEEDS,
};
pub use rouge::{lcs_len, rouge_l, RougeScore};
