//! Where distillation sequences come from: the dataset, the teacher, the
//! student (optionally corrected), or a replay buffer of past generations.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{correct_batch, CorrectionConfig, GeneratedSample, Provenance};
use crate::data::{derive_seed, seeded_rng, Example};
use crate::error::{Error, Result};
use crate::lm::{generate_batch, DecodeMode, GenRequest, NextTokenModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    /// Reference responses verbatim.
    FixedDataset,
    /// Fresh student generations.
    Student,
    /// Teacher generations.
    Teacher,
    /// Per sample: student with probability `ratio`, else dataset.
    Mixed { ratio: f64 },
    /// Student generations through a replay buffer.
    StudentOffPolicy,
    /// Student generations with correction, fresh each step or through a
    /// replay buffer.
    Scrg { off_policy: bool },
}

serde_via_str!(PolicyKind);

impl PolicyKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyKind::Mixed { ratio } if !(0.0..=1.0).contains(&ratio) => {
                Err(Error::OutOfRange { name: "mixed ratio", value: ratio })
            }
            _ => Ok(()),
        }
    }

    pub fn uses_buffer(&self) -> bool {
        matches!(
            self,
            PolicyKind::StudentOffPolicy | PolicyKind::Scrg { off_policy: true }
        )
    }

    pub fn corrects(&self) -> bool {
        matches!(self, PolicyKind::Scrg { .. })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::FixedDataset => f.write_str("fixed"),
            PolicyKind::Student => f.write_str("student"),
            PolicyKind::Teacher => f.write_str("teacher"),
            PolicyKind::Mixed { ratio } => write!(f, "mixed:{ratio}"),
            PolicyKind::StudentOffPolicy => f.write_str("off"),
            PolicyKind::Scrg { off_policy: false } => f.write_str("scrg-on"),
            PolicyKind::Scrg { off_policy: true } => f.write_str("scrg-off"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    /// `fixed`, `student`, `teacher`, `mixed:R`, `off`, `scrg-on`, `scrg-off`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let kind = match s {
            "fixed" => PolicyKind::FixedDataset,
            "student" => PolicyKind::Student,
            "teacher" => PolicyKind::Teacher,
            "off" => PolicyKind::StudentOffPolicy,
            "scrg-on" => PolicyKind::Scrg { off_policy: false },
            "scrg-off" => PolicyKind::Scrg { off_policy: true },
            _ => {
                let ratio = s
                    .strip_prefix("mixed:")
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown policy {s:?}"))?;
                PolicyKind::Mixed { ratio }
            }
        };
        kind.validate().map_err(|e| e.to_string())?;
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationPolicy {
    pub kind: PolicyKind,
    pub seed: u64,
}

/// FIFO store of past generations with the probability of generating fresh.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<(usize, GeneratedSample)>,
    pub p_gen: f64,
    /// Increase applied to `p_gen` on a validation plateau.
    pub delta: f64,
    /// Minimum validation-loss improvement that does not count as a plateau.
    pub epsilon: f64,
}

impl ReplayBuffer {
    pub const DEFAULT_DELTA: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn new(capacity: usize, p_gen: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p_gen) {
            return Err(Error::OutOfRange { name: "p_gen", value: p_gen });
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            p_gen,
            delta: Self::DEFAULT_DELTA,
            epsilon: Self::DEFAULT_EPSILON,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts a sample, evicting the oldest when full.
    pub fn push(&mut self, step: usize, sample: GeneratedSample) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((step, sample));
    }

    pub fn get(&self, i: usize) -> Option<&GeneratedSample> {
        self.items.get(i).map(|(_, s)| s)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &GeneratedSample)> {
        self.items.iter().map(|(step, s)| (*step, s))
    }
}

/// Raises `p_gen` by `delta` (capped at 1) when the latest validation loss
/// did not improve on the previous one by at least `epsilon`. Needs two
/// entries; otherwise leaves `p_gen` alone. Returns the new `p_gen`.
pub fn update_schedule(buffer: &mut ReplayBuffer, validation_history: &[f64]) -> f64 {
    if let [.., prev, last] = validation_history {
        if !(*last < *prev - buffer.epsilon) {
            buffer.p_gen = (buffer.p_gen + buffer.delta).min(1.0);
        }
    }
    buffer.p_gen
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub policy: GenerationPolicy,
    /// Decoding for fresh student and teacher generations.
    pub gen_mode: DecodeMode,
    /// How the teacher's replacement token is chosen.
    pub teacher_token_mode: DecodeMode,
    pub max_len: usize,
    pub eos: usize,
    pub buffer_capacity: usize,
    pub initial_p_gen: f64,
    pub record_profile: bool,
}

/// Counts for one sampled batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub total: usize,
    pub fresh: usize,
    pub from_buffer: usize,
    /// Fresh generations forced by an empty buffer.
    pub buffer_fallback: usize,
    pub corrected: usize,
}

impl BatchStats {
    pub fn corrected_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.corrected as f64 / self.total as f64
        }
    }
}

enum Source {
    Dataset,
    Teacher,
    Student,
    Buffer,
}

/// Draws distillation sequences according to a policy.
#[derive(Clone, Debug)]
pub struct Sampler {
    config: SamplerConfig,
    buffer: Option<ReplayBuffer>,
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.policy.kind.validate()?;
        config.gen_mode.validate()?;
        config.teacher_token_mode.validate()?;
        let buffer = if config.policy.kind.uses_buffer() {
            Some(ReplayBuffer::new(config.buffer_capacity, config.initial_p_gen)?)
        } else {
            None
        };
        Ok(Self { config, buffer })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Whether corrected samples carry their divergence profile.
    pub fn set_record_profile(&mut self, on: bool) {
        self.config.record_profile = on;
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    pub fn buffer_mut(&mut self) -> Option<&mut ReplayBuffer> {
        self.buffer.as_mut()
    }

    /// Current regeneration probability; 1 for policies without a buffer.
    pub fn p_gen(&self) -> f64 {
        self.buffer.as_ref().map_or(1.0, |b| b.p_gen)
    }

    /// Applies the plateau rule when a buffer is in use.
    pub fn update_schedule(&mut self, validation_history: &[f64]) -> f64 {
        match self.buffer.as_mut() {
            Some(b) => update_schedule(b, validation_history),
            None => 1.0,
        }
    }

    /// One distillation sequence per example. All randomness for sample `i`
    /// derives from `(policy seed, step, i)`.
    pub fn sample_batch<S, T>(
        &mut self,
        examples: &[Example],
        student: &S,
        teacher: &T,
        step: usize,
    ) -> Result<(Vec<GeneratedSample>, BatchStats)>
    where
        S: NextTokenModel + ?Sized,
        T: NextTokenModel + ?Sized,
    {
        if examples.is_empty() {
            return Err(Error::Invalid("cannot sample from an empty batch".into()));
        }
        let cfg = self.config;
        let kind = cfg.policy.kind;
        let seeds: Vec<u64> = (0..examples.len())
            .map(|i| derive_seed(cfg.policy.seed, &[step as u64, i as u64]))
            .collect();
        let mut stats = BatchStats {
            total: examples.len(),
            ..BatchStats::default()
        };

        let mut sources = Vec::with_capacity(examples.len());
        for &seed in &seeds {
            let mut rng = seeded_rng(derive_seed(seed, &[0]));
            let src = match kind {
                PolicyKind::FixedDataset => Source::Dataset,
                PolicyKind::Teacher => Source::Teacher,
                PolicyKind::Student | PolicyKind::Scrg { off_policy: false } => Source::Student,
                PolicyKind::Mixed { ratio } => {
                    if rng.random::<f64>() < ratio {
                        Source::Student
                    } else {
                        Source::Dataset
                    }
                }
                PolicyKind::StudentOffPolicy | PolicyKind::Scrg { off_policy: true } => {
                    let buf = self.buffer.as_ref().expect("off-policy sampler has a buffer");
                    if rng.random::<f64>() < buf.p_gen {
                        Source::Student
                    } else if buf.is_empty() {
                        stats.buffer_fallback += 1;
                        Source::Student
                    } else {
                        Source::Buffer
                    }
                }
            };
            sources.push(src);
        }

        let mut out: Vec<Option<GeneratedSample>> = vec![None; examples.len()];
        let mut student_idx = Vec::new();
        let mut teacher_idx = Vec::new();
        for (i, src) in sources.iter().enumerate() {
            match src {
                Source::Dataset => out[i] = Some(GeneratedSample::from_example(&examples[i], cfg.eos)),
                Source::Student => student_idx.push(i),
                Source::Teacher => teacher_idx.push(i),
                Source::Buffer => {
                    let buf = self.buffer.as_ref().expect("buffer");
                    let k = seeded_rng(derive_seed(seeds[i], &[3])).random_range(0..buf.len());
                    out[i] = Some(buf.get(k).expect("index in range").clone());
                    stats.from_buffer += 1;
                }
            }
        }

        let request = |i: usize| GenRequest::new(examples[i].prompt.clone(), cfg.max_len, derive_seed(seeds[i], &[4]));
        for (idx, tag) in [(&teacher_idx, Provenance::Teacher), (&student_idx, Provenance::Student)] {
            if idx.is_empty() {
                continue;
            }
            let reqs: Vec<GenRequest> = idx.iter().map(|&i| request(i)).collect();
            let resp = if tag == Provenance::Teacher {
                generate_batch(teacher, &reqs, cfg.gen_mode, cfg.eos)?
            } else {
                generate_batch(student, &reqs, cfg.gen_mode, cfg.eos)?
            };
            for (&i, tokens) in idx.iter().zip(resp) {
                out[i] = Some(GeneratedSample::new(examples[i].id, examples[i].prompt.clone(), tokens, tag));
            }
        }
        stats.fresh = student_idx.len() + teacher_idx.len();

        if kind.corrects() && !student_idx.is_empty() {
            let fresh: Vec<GeneratedSample> = student_idx
                .iter()
                .map(|&i| out[i].take().expect("generated"))
                .collect();
            let fseeds: Vec<u64> = student_idx.iter().map(|&i| derive_seed(seeds[i], &[5])).collect();
            let ccfg = CorrectionConfig {
                teacher_mode: cfg.teacher_token_mode,
                student_mode: cfg.gen_mode,
                max_len: cfg.max_len,
                stop: cfg.eos,
                record_profile: cfg.record_profile,
            };
            let corrected = correct_batch(student, teacher, &fresh, &fseeds, &ccfg)?;
            for (&i, s) in student_idx.iter().zip(corrected) {
                out[i] = Some(s);
            }
        }

        if let Some(buf) = self.buffer.as_mut() {
            for &i in &student_idx {
                buf.push(step, out[i].clone().expect("generated"));
            }
        }

        let samples: Vec<GeneratedSample> = out.into_iter().map(|s| s.expect("filled")).collect();
        stats.corrected = samples.iter().filter(|s| s.is_corrected()).count();
        Ok((samples, stats))
    }
}
