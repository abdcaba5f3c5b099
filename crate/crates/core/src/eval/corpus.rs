//! Seeded template grammar producing instruction/response pairs with gold
//! phrase spans.
//!
//! Prompt: `<instruction> <subject> <object> <place> :`. Response:
//!
//! ```text
//! DET [ADJ] SUBJECT VERB [ADV] DET [ADJ] OBJECT PREP DET PLACE
//! ```
//!
//! The subject adjective, verb, adverb and preposition are fixed functions
//! of two or three prompt words each (tables drawn once from the grammar
//! seed): the verb depends on subject, object and place, which a one-layer
//! student only partly captures. The determiners and the object adjective
//! are drawn per sample. The
//! instruction decides which optional slots appear: `describe` uses both
//! adjectives, `tell` uses the adverb only, `write` uses the subject
//! adjective and the adverb.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, seeded_rng, Corpus, Example, Vocab, EOS, PAD};
use crate::error::Result;
use crate::spans::{save_annotations, Lexicon, PosTag, Span, SpanAnnotation, SpanKind};

const INSTRUCTIONS: [&str; 3] = ["describe", "tell", "write"];
const DETS: [&str; 2] = ["the", "a"];
const ADJS: [&str; 8] = ["big", "small", "red", "old", "quiet", "bright", "happy", "tiny"];
const SUBJECTS: [&str; 12] = [
    "dog", "cat", "bird", "fox", "horse", "child", "farmer", "teacher", "robot", "king", "sailor", "wolf",
];
const OBJECTS: [&str; 12] = [
    "ball", "book", "apple", "letter", "stone", "box", "song", "map", "key", "cake", "rope", "coin",
];
const PLACES: [&str; 8] = ["park", "garden", "river", "market", "forest", "castle", "harbor", "school"];
const VERBS: [&str; 10] = [
    "finds", "carries", "throws", "paints", "reads", "hides", "sells", "drops", "kicks", "builds",
];
const ADVS: [&str; 6] = ["quickly", "slowly", "quietly", "happily", "carefully", "often"];
const PREPS: [&str; 5] = ["in", "near", "under", "behind", "beside"];
const SEP: &str = ":";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarConfig {
    /// Seed of the fixed lookup tables shared by every split.
    pub grammar_seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self { grammar_seed: 7 }
    }
}

/// Generated data plus the vocabulary and lexicon that describe it.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub lexicon: Lexicon,
    pub corpus: Corpus,
    pub spans: Vec<SpanAnnotation>,
}

struct Tables {
    /// By subject and place.
    subj_adj: Vec<Vec<usize>>,
    /// By subject, object and place.
    verb: Vec<Vec<Vec<usize>>>,
    /// By subject and object.
    adv: Vec<Vec<usize>>,
    /// By instruction, object and place.
    prep: Vec<Vec<Vec<usize>>>,
}

fn table2(rng: &mut impl Rng, a: usize, b: usize, n: usize) -> Vec<Vec<usize>> {
    (0..a).map(|_| (0..b).map(|_| rng.random_range(0..n)).collect()).collect()
}

impl Tables {
    fn new(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let subj_adj = table2(&mut rng, SUBJECTS.len(), PLACES.len(), ADJS.len());
        let verb = (0..SUBJECTS.len())
            .map(|_| table2(&mut rng, OBJECTS.len(), PLACES.len(), VERBS.len()))
            .collect();
        let adv = table2(&mut rng, SUBJECTS.len(), OBJECTS.len(), ADVS.len());
        let prep = (0..INSTRUCTIONS.len())
            .map(|_| table2(&mut rng, OBJECTS.len(), PLACES.len(), PREPS.len()))
            .collect();
        Self {
            subj_adj,
            verb,
            adv,
            prep,
        }
    }
}

/// The grammar's vocabulary and part-of-speech lexicon.
pub fn grammar_vocab() -> (Vocab, Lexicon) {
    let mut tokens: Vec<(&str, PosTag)> = vec![(PAD, PosTag::Other), (EOS, PosTag::Other), (SEP, PosTag::Other)];
    tokens.extend(INSTRUCTIONS.iter().map(|w| (*w, PosTag::Other)));
    tokens.extend(DETS.iter().map(|w| (*w, PosTag::Det)));
    tokens.extend(ADJS.iter().map(|w| (*w, PosTag::Adj)));
    for group in [&SUBJECTS[..], &OBJECTS[..], &PLACES[..]] {
        tokens.extend(group.iter().map(|w| (*w, PosTag::Noun)));
    }
    tokens.extend(VERBS.iter().map(|w| (*w, PosTag::Verb)));
    tokens.extend(ADVS.iter().map(|w| (*w, PosTag::Adv)));
    tokens.extend(PREPS.iter().map(|w| (*w, PosTag::Prep)));
    let vocab = Vocab::new(tokens.iter().map(|(w, _)| w.to_string()).collect()).expect("grammar vocabulary is valid");
    let mut lexicon = Lexicon::new();
    for (id, (_, tag)) in tokens.iter().enumerate() {
        if *tag != PosTag::Other {
            lexicon.insert(id, *tag);
        }
    }
    (vocab, lexicon)
}

/// `size` samples drawn with `seed`; sample ids are 0-based indices.
pub fn gen_synthetic_corpus(seed: u64, size: usize, grammar: &GrammarConfig) -> SyntheticCorpus {
    let (vocab, lexicon) = grammar_vocab();
    let tables = Tables::new(grammar.grammar_seed);
    let id = |w: &str| vocab.id(w).expect("grammar word in vocabulary");
    let mut rng = seeded_rng(derive_seed(seed, &[size as u64]));
    let mut examples = Vec::with_capacity(size);
    let mut spans = Vec::with_capacity(size);
    for n in 0..size {
        let instr = rng.random_range(0..INSTRUCTIONS.len());
        let subj = rng.random_range(0..SUBJECTS.len());
        let obj = rng.random_range(0..OBJECTS.len());
        let place = rng.random_range(0..PLACES.len());
        let prompt = vec![
            id(INSTRUCTIONS[instr]),
            id(SUBJECTS[subj]),
            id(OBJECTS[obj]),
            id(PLACES[place]),
            id(SEP),
        ];
        let (subj_adj, adverb, obj_adj) = match INSTRUCTIONS[instr] {
            "describe" => (true, false, true),
            "tell" => (false, true, false),
            _ => (true, true, false),
        };
        let mut resp = Vec::new();
        let mut sp = Vec::new();

        let start = resp.len();
        resp.push(id(DETS.choose(&mut rng).expect("non-empty")));
        if subj_adj {
            resp.push(id(ADJS[tables.subj_adj[subj][place]]));
        }
        resp.push(id(SUBJECTS[subj]));
        sp.push(Span::new(start, resp.len() - start, SpanKind::Np));

        let start = resp.len();
        resp.push(id(VERBS[tables.verb[subj][obj][place]]));
        if adverb {
            resp.push(id(ADVS[tables.adv[subj][obj]]));
        }
        sp.push(Span::new(start, resp.len() - start, SpanKind::Vp));

        let start = resp.len();
        resp.push(id(DETS.choose(&mut rng).expect("non-empty")));
        if obj_adj {
            resp.push(id(ADJS.choose(&mut rng).expect("non-empty")));
        }
        resp.push(id(OBJECTS[obj]));
        sp.push(Span::new(start, resp.len() - start, SpanKind::Np));

        let start = resp.len();
        resp.push(id(PREPS[tables.prep[instr][obj][place]]));
        resp.push(id(DETS.choose(&mut rng).expect("non-empty")));
        resp.push(id(PLACES[place]));
        sp.push(Span::new(start, resp.len() - start, SpanKind::Pp));

        examples.push(Example {
            id: n as u64,
            prompt,
            response: resp,
        });
        spans.push(SpanAnnotation {
            sample_id: n as u64,
            spans: sp,
        });
    }
    SyntheticCorpus {
        vocab,
        lexicon,
        corpus: Corpus { examples },
        spans,
    }
}

/// File names written by [`write_dataset`].
pub struct DatasetFiles;

impl DatasetFiles {
    pub const VOCAB: &'static str = "vocab.txt";
    pub const LEXICON: &'static str = "lexicon.txt";
    pub const TRAIN: &'static str = "corpus.tsv";
    pub const TRAIN_SPANS: &'static str = "corpus.spans";
    pub const TEST: &'static str = "test.tsv";
    pub const TEST_SPANS: &'static str = "test.spans";
}

/// Writes a training pool of `n_train` samples (validation is split from
/// its tail at training time) and a separate test set of `n_test` samples.
pub fn write_dataset(dir: &Path, seed: u64, n_train: usize, n_test: usize, grammar: &GrammarConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let train = gen_synthetic_corpus(derive_seed(seed, &[0]), n_train, grammar);
    let test = gen_synthetic_corpus(derive_seed(seed, &[1]), n_test, grammar);
    train.vocab.save(&dir.join(DatasetFiles::VOCAB))?;
    train.lexicon.save(&dir.join(DatasetFiles::LEXICON))?;
    train.corpus.save(&dir.join(DatasetFiles::TRAIN), &train.vocab)?;
    save_annotations(&dir.join(DatasetFiles::TRAIN_SPANS), &train.spans)?;
    test.corpus.save(&dir.join(DatasetFiles::TEST), &test.vocab)?;
    save_annotations(&dir.join(DatasetFiles::TEST_SPANS), &test.spans)?;
    Ok(())
}
