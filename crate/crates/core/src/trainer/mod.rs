//! Teacher fine-tuning and student distillation loops.
//!
//! Both loops share one implementation: teacher training is distillation
//! without a teacher and with only the supervised term, which is what makes
//! `distill` with weights `(1, 0, 0)` and the fixed-dataset policy reproduce
//! `train_teacher` exactly.

mod optim;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mgsr_autodiff::{AutodiffError, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use optim::{Adam, AdamConfig};

use crate::checkpoint::Checkpoint;
use crate::data::{derive_seed, permutation, Example};
use crate::divergences::{
    clipped_kl_rows, divergence_rows, nll_rows, sft_loss, span_loss_graph, weighted_total, ClipMode, DacComponents,
    Divergence, DivergenceParams, LossParts, LossWeights, SpanPair, SubNetwork,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_multiseed, EvalConfig, RougeScore};
use crate::lm::{response_rows, DecodeMode, NextTokenModel, TransformerLm};
use crate::scrg::{GeneratedSample, GenerationPolicy, PolicyKind, Provenance, Sampler, SamplerConfig};
use crate::spans::{chunk_heuristic, Lexicon, Span, SpanAnnotation};

/// Seed-derivation tags for the independent random streams of a run.
const TAG_SHUFFLE: u64 = 1;
const TAG_SAMPLER: u64 = 2;
const TAG_SUBNET: u64 = 3;

/// Criterion for keeping the best checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest validation NLL.
    ValidationLoss,
    /// Highest greedy validation ROUGE-L.
    ValidationRouge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_weights: LossWeights,
    pub policy: PolicyKind,
    pub divergence: Divergence,
    pub divergence_params: DivergenceParams,
    /// The first seed drives training; the list as a whole is used by
    /// multi-seed evaluation.
    pub seeds: Vec<u64>,
    pub validation_fraction: f64,
    pub clip_mode: ClipMode,
    pub dac_components: DacComponents,
    pub optimizer: AdamConfig,
    /// Response length limit for generated sequences.
    pub max_gen_len: usize,
    /// Decoding of student (and teacher) generations during training.
    pub gen_mode: DecodeMode,
    /// How the teacher's replacement token is chosen during correction.
    pub teacher_token_mode: DecodeMode,
    pub buffer_capacity: usize,
    pub initial_p_gen: f64,
    pub subnet_hidden: usize,
    pub selection: Selection,
    /// Write the sampled batch to the sample dump every this many steps
    /// (0 disables).
    pub sample_dump_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 20,
            batch_size: 16,
            loss_weights: LossWeights::default(),
            policy: PolicyKind::Scrg { off_policy: false },
            divergence: Divergence::Dackl,
            divergence_params: DivergenceParams::default(),
            seeds: vec![0],
            validation_fraction: 0.05,
            clip_mode: ClipMode::default(),
            dac_components: DacComponents::default(),
            optimizer: AdamConfig::default(),
            max_gen_len: 16,
            gen_mode: DecodeMode::Sample { temperature: 1.0 },
            teacher_token_mode: DecodeMode::Greedy,
            buffer_capacity: 1000,
            initial_p_gen: 0.5,
            subnet_hidden: SubNetwork::DEFAULT_HIDDEN,
            selection: Selection::ValidationLoss,
            sample_dump_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::OutOfRange {
                name: "validation_fraction",
                value: self.validation_fraction,
            });
        }
        if self.max_gen_len == 0 || self.subnet_hidden == 0 {
            return Err(Error::Config("max_gen_len and subnet_hidden must be positive".into()));
        }
        self.loss_weights.validate()?;
        self.policy.validate()?;
        self.divergence_params.validate()?;
        self.clip_mode.validate()?;
        self.dac_components.validate()?;
        self.optimizer.validate()?;
        self.gen_mode.validate()?;
        self.teacher_token_mode.validate()
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_sft: f64,
    pub loss_dac: f64,
    pub loss_span: f64,
    pub loss_total: f64,
    /// Set on the last step of each epoch.
    pub validation_loss: Option<f64>,
    pub validation_rouge: Option<f64>,
    pub p_gen: f64,
    pub corrected_fraction: f64,
    pub buffer_fallback: usize,
    pub grad_norm: f64,
    pub wallclock: f64,
}

impl MetricsRecord {
    /// The record with the wall-clock field zeroed, for run-to-run
    /// comparison.
    pub fn deterministic(&self) -> Self {
        Self {
            wallclock: 0.0,
            ..self.clone()
        }
    }
}

/// Examples and annotations for one run.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [Example],
    pub validation: &'a [Example],
    /// Gold spans of dataset responses, by example id.
    pub spans: Option<&'a BTreeMap<u64, SpanAnnotation>>,
    /// Part-of-speech lexicon for chunking generated responses.
    pub lexicon: Option<&'a Lexicon>,
    pub eos: usize,
    pub pad: usize,
}

/// Where a run writes its artifacts; unset paths are skipped.
#[derive(Clone, Debug, Default)]
pub struct RunFiles {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by the selection criterion (epoch 0 is the initialization).
    pub model: TransformerLm,
    pub subnet: Option<SubNetwork>,
    pub metrics: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub validation_history: Vec<f64>,
    pub rouge_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.model.clone(), self.subnet.clone())
    }
}

/// Supervised fine-tuning only.
pub fn train_teacher(config: &TrainConfig, model: TransformerLm, data: &TrainData, files: &RunFiles) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        loss_weights: LossWeights::new(1.0, 0.0, 0.0)?,
        policy: PolicyKind::FixedDataset,
        ..config.clone()
    };
    Run::new(&cfg, model, None, data, files)?.run()
}

/// Trains `student` against the frozen `teacher` with the configured
/// policy, divergence and loss weights.
pub fn distill(
    config: &TrainConfig,
    teacher: &TransformerLm,
    student: TransformerLm,
    data: &TrainData,
    files: &RunFiles,
) -> Result<TrainOutcome> {
    let (t, s) = (teacher.config(), student.config());
    if t.vocab_size != s.vocab_size {
        return Err(Error::VocabMismatch(format!(
            "teacher vocabulary {} vs student {}",
            t.vocab_size, s.vocab_size
        )));
    }
    Run::new(config, student, Some(teacher), data, files)?.run()
}

/// Mean next-token NLL over every target token of `examples`.
pub fn validation_loss<M: NextTokenModel + ?Sized>(model: &M, examples: &[Example], eos: usize) -> Result<f64> {
    let targets: Vec<Vec<usize>> = examples.iter().map(|e| e.target(eos)).collect();
    let pairs: Vec<(&[usize], &[usize])> = examples
        .iter()
        .zip(&targets)
        .map(|(e, t)| (e.prompt.as_slice(), t.as_slice()))
        .collect();
    let dists: Vec<_> = model.response_dists(&pairs)?.into_iter().flatten().collect();
    let flat: Vec<usize> = targets.into_iter().flatten().collect();
    sft_loss(&dists, &flat)
}

/// Greedy ROUGE-L F1 of `model` on `examples`.
pub fn validation_rouge<M: NextTokenModel + ?Sized>(model: &M, examples: &[Example], cfg: &EvalConfig) -> Result<f64> {
    let cfg = EvalConfig {
        mode: DecodeMode::Greedy,
        ..*cfg
    };
    Ok(evaluate_multiseed(model, examples, &[0], &cfg)?.mean.f1)
}

struct Run<'a> {
    cfg: TrainConfig,
    student: TransformerLm,
    subnet: Option<SubNetwork>,
    train_subnet: bool,
    teacher: Option<&'a TransformerLm>,
    sampler: Option<Sampler>,
    data: &'a TrainData<'a>,
    files: &'a RunFiles,
    adam: Adam,
    metrics_out: Option<BufWriter<File>>,
}

/// Sequences of one step laid out for a single student forward pass.
struct StepLayout {
    seqs: Vec<Vec<usize>>,
    rows: Vec<(usize, usize)>,
    sft_targets: Vec<usize>,
    kd_rows: usize,
}

impl<'a> Run<'a> {
    fn new(
        cfg: &TrainConfig,
        student: TransformerLm,
        teacher: Option<&'a TransformerLm>,
        data: &'a TrainData<'a>,
        files: &'a RunFiles,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() || data.validation.is_empty() {
            return Err(Error::Invalid("training and validation sets must be non-empty".into()));
        }
        let m = student.config().vocab_size;
        for ex in data.train.iter().chain(data.validation) {
            if let Some(&id) = ex.prompt.iter().chain(&ex.response).find(|&&t| t >= m) {
                return Err(Error::VocabMismatch(format!("example {} uses token {id} outside vocabulary {m}", ex.id)));
            }
        }
        let seed = cfg.seed();
        let w = cfg.loss_weights;
        let kd = teacher.is_some() && (w.dac > 0.0 || w.span > 0.0);
        let use_subnet = teacher.is_some()
            && w.dac > 0.0
            && cfg.divergence == Divergence::Dackl
            && cfg.dac_components.high_density;
        let subnet = if use_subnet {
            Some(SubNetwork::new(m, cfg.subnet_hidden, derive_seed(seed, &[TAG_SUBNET]))?)
        } else {
            None
        };
        let train_subnet = use_subnet && matches!(cfg.clip_mode, ClipMode::Soft { .. });
        let sampler = if kd {
            Some(Sampler::new(SamplerConfig {
                policy: GenerationPolicy {
                    kind: cfg.policy,
                    seed: derive_seed(seed, &[TAG_SAMPLER]),
                },
                gen_mode: cfg.gen_mode,
                teacher_token_mode: cfg.teacher_token_mode,
                max_len: cfg.max_gen_len,
                eos: data.eos,
                buffer_capacity: cfg.buffer_capacity,
                initial_p_gen: cfg.initial_p_gen,
                record_profile: false,
            })?)
        } else {
            None
        };
        let mut shapes: Vec<&Tensor> = student.params().tensors().iter().collect();
        if train_subnet {
            shapes.extend(subnet.as_ref().expect("subnet").params().tensors());
        }
        let adam = Adam::new(cfg.optimizer, cfg.learning_rate, &shapes);
        let metrics_out = match &files.metrics {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        if let Some(p) = &files.samples {
            File::create(p).map_err(|e| Error::io(p, e))?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            student,
            subnet,
            train_subnet,
            teacher,
            sampler,
            data,
            files,
            adam,
            metrics_out,
        })
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            mode: DecodeMode::Greedy,
            max_len: self.cfg.max_gen_len,
            eos: self.data.eos,
            pad: self.data.pad,
        }
    }

    /// Validation loss, validation ROUGE (when selecting on it) and the
    /// score to maximize.
    fn validate_model(&self) -> Result<(f64, Option<f64>, f64)> {
        let loss = validation_loss(&self.student, self.data.validation, self.data.eos)?;
        match self.cfg.selection {
            Selection::ValidationLoss => Ok((loss, None, -loss)),
            Selection::ValidationRouge => {
                let r = validation_rouge(&self.student, self.data.validation, &self.eval_config())?;
                Ok((loss, Some(r), r))
            }
        }
    }

    fn save_best(&self) -> Result<()> {
        if let Some(p) = &self.files.checkpoint {
            Checkpoint::new(self.student.clone(), self.subnet.clone()).save(p)?;
        }
        Ok(())
    }

    fn write_metrics(&mut self, records: &[MetricsRecord]) -> Result<()> {
        if let (Some(w), Some(p)) = (self.metrics_out.as_mut(), self.files.metrics.as_ref()) {
            for r in records {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(p, e))?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    fn run(mut self) -> Result<TrainOutcome> {
        let start = Instant::now();
        let seed = self.cfg.seed();
        let (loss0, rouge0, mut best_score) = self.validate_model()?;
        let mut validation_history = vec![loss0];
        let mut rouge_history: Vec<f64> = rouge0.into_iter().collect();
        let mut best = (self.student.clone(), self.subnet.clone());
        let mut best_epoch = 0;
        self.save_best()?;
        info!("epoch 0: validation loss {loss0:.4}");

        let mut metrics = Vec::new();
        let mut step = 0;
        let n = self.data.train.len();
        for epoch in 1..=self.cfg.epochs {
            let order = permutation(n, derive_seed(seed, &[TAG_SHUFFLE, epoch as u64]));
            let mut pending = Vec::new();
            for chunk in order.chunks(self.cfg.batch_size) {
                step += 1;
                let batch: Vec<Example> = chunk.iter().map(|&i| self.data.train[i].clone()).collect();
                match self.step(&batch, step) {
                    Ok(mut rec) => {
                        rec.epoch = epoch;
                        rec.wallclock = start.elapsed().as_secs_f64();
                        pending.push(rec);
                    }
                    Err(e) => {
                        self.write_metrics(&pending)?;
                        return Err(match e {
                            Error::Autodiff(AutodiffError::NaN(op)) => Error::NonFiniteLoss { term: op, step },
                            other => other,
                        });
                    }
                }
            }
            let (loss, rouge, score) = self.validate_model()?;
            validation_history.push(loss);
            rouge_history.extend(rouge);
            if let Some(s) = self.sampler.as_mut() {
                s.update_schedule(&validation_history);
            }
            if let Some(last) = pending.last_mut() {
                last.validation_loss = Some(loss);
                last.validation_rouge = rouge;
                last.p_gen = self.sampler.as_ref().map_or(1.0, Sampler::p_gen);
            }
            self.write_metrics(&pending)?;
            metrics.extend(pending);
            info!("epoch {epoch}: validation loss {loss:.4}{}", rouge.map(|r| format!(", rouge-l {r:.4}")).unwrap_or_default());
            if score > best_score {
                best_score = score;
                best_epoch = epoch;
                best = (self.student.clone(), self.subnet.clone());
                self.save_best()?;
            }
        }
        Ok(TrainOutcome {
            model: best.0,
            subnet: best.1,
            metrics,
            best_epoch,
            validation_history,
            rouge_history,
        })
    }

    fn layout(&self, batch: &[Example], samples: &[GeneratedSample]) -> Result<StepLayout> {
        let w = self.cfg.loss_weights;
        let eos = self.data.eos;
        let mut layout = StepLayout {
            seqs: Vec::new(),
            rows: Vec::new(),
            sft_targets: Vec::new(),
            kd_rows: 0,
        };
        let append = |pairs: &[(&[usize], &[usize])], layout: &mut StepLayout| -> Result<usize> {
            let (seqs, rows) = response_rows(pairs)?;
            let offset = layout.seqs.len();
            layout.seqs.extend(seqs);
            layout.rows.extend(rows.iter().map(|&(b, t)| (b + offset, t)));
            Ok(rows.len())
        };
        if w.sft > 0.0 {
            let targets: Vec<Vec<usize>> = batch.iter().map(|e| e.target(eos)).collect();
            let pairs: Vec<(&[usize], &[usize])> = batch
                .iter()
                .zip(&targets)
                .map(|(e, t)| (e.prompt.as_slice(), t.as_slice()))
                .collect();
            append(&pairs, &mut layout)?;
            layout.sft_targets = targets.into_iter().flatten().collect();
        }
        let pairs: Vec<(&[usize], &[usize])> = samples
            .iter()
            .filter(|s| !s.tokens.is_empty())
            .map(|s| (s.prompt.as_slice(), s.tokens.as_slice()))
            .collect();
        if !pairs.is_empty() {
            layout.kd_rows = append(&pairs, &mut layout)?;
        }
        Ok(layout)
    }

    /// Spans for a sample: gold annotations for dataset responses, the
    /// chunker for anything generated.
    fn sample_spans(&self, s: &GeneratedSample) -> Vec<Span> {
        let len = s.tokens.len();
        let from_dataset = s.provenance.iter().all(|&p| p == Provenance::Dataset);
        if from_dataset {
            if let Some(ann) = self.data.spans.and_then(|m| m.get(&s.id)) {
                return ann.spans.iter().copied().filter(|sp| sp.end() <= len).collect();
            }
        }
        match self.data.lexicon {
            Some(lex) => {
                let body = match s.tokens.last() {
                    Some(&t) if t == self.data.eos => &s.tokens[..len - 1],
                    _ => &s.tokens[..],
                };
                chunk_heuristic(body, lex)
            }
            None => Vec::new(),
        }
    }

    fn step(&mut self, batch: &[Example], step: usize) -> Result<MetricsRecord> {
        let w = self.cfg.loss_weights;
        let m = self.student.config().vocab_size;
        let (samples, stats) = match (self.sampler.as_mut(), self.teacher) {
            (Some(sampler), Some(teacher)) => {
                let dump = self.files.samples.is_some()
                    && self.cfg.sample_dump_every > 0
                    && step % self.cfg.sample_dump_every == 0;
                sampler.set_record_profile(dump);
                let out = sampler.sample_batch(batch, &self.student, teacher, step)?;
                if dump {
                    append_samples(self.files.samples.as_deref().expect("samples path"), &out.0)?;
                }
                out
            }
            _ => (Vec::new(), Default::default()),
        };
        let samples: Vec<GeneratedSample> = samples.into_iter().filter(|s| !s.tokens.is_empty()).collect();
        let layout = self.layout(batch, &samples)?;
        let n_sft = layout.sft_targets.len();

        let mut g = Graph::new();
        let svars = self.student.bind(&mut g, true);
        let subvars = self.subnet.as_ref().map(|s| s.bind(&mut g, self.train_subnet));
        let refs: Vec<&[usize]> = layout.seqs.iter().map(Vec::as_slice).collect();
        let logits = self.student.logits(&mut g, &svars, &refs, &layout.rows)?;

        let mut parts = LossParts::default();
        let mut sft_var = None;
        if n_sft > 0 {
            let l = if layout.kd_rows > 0 {
                g.select_rows(logits, &(0..n_sft).collect::<Vec<_>>())?
            } else {
                logits
            };
            let nll = nll_rows(&mut g, l, &layout.sft_targets)?;
            let v = g.mean(nll)?;
            parts.sft = g.value(v).item()?;
            sft_var = Some(v);
        }

        let (mut dac_var, mut span_var) = (None, None);
        if layout.kd_rows > 0 {
            let teacher = self.teacher.expect("teacher present when sampling");
            let kd_logits = if n_sft > 0 {
                g.select_rows(logits, &(n_sft..n_sft + layout.kd_rows).collect::<Vec<_>>())?
            } else {
                logits
            };
            let s = g.softmax(kd_logits, 1)?;
            let pairs: Vec<(&[usize], &[usize])> = samples
                .iter()
                .map(|x| (x.prompt.as_slice(), x.tokens.as_slice()))
                .collect();
            let mut tdata = Vec::with_capacity(layout.kd_rows * m);
            for d in teacher.response_dists(&pairs)?.iter().flatten() {
                tdata.extend_from_slice(d.values());
            }
            let t = g.constant(Tensor::new(vec![layout.kd_rows, m], tdata)?);
            let b = samples.len() as f64;

            if w.dac > 0.0 {
                let rows = match self.cfg.divergence {
                    Divergence::Dackl => {
                        let bounds = match (&self.subnet, &subvars) {
                            (Some(net), Some(vars)) => Some(net.quantiles(&mut g, vars, t, s)?),
                            _ => None,
                        };
                        clipped_kl_rows(&mut g, t, s, bounds, self.cfg.clip_mode, self.cfg.dac_components)?
                    }
                    kind => divergence_rows(&mut g, kind, t, s, self.cfg.divergence_params)?,
                };
                let weights: Vec<f64> = samples
                    .iter()
                    .flat_map(|x| std::iter::repeat_n(1.0 / (x.tokens.len() as f64 * b), x.tokens.len()))
                    .collect();
                let wv = g.constant(Tensor::from_slice(&weights));
                let weighted = g.mul(rows, wv)?;
                let v = g.sum(weighted, None)?;
                parts.dac = g.value(v).item()?;
                dac_var = Some(v);
            }
            if w.span > 0.0 {
                let mut pairs = Vec::new();
                let mut offset = 0;
                for x in &samples {
                    let spans = self.sample_spans(x);
                    pairs.extend(SpanPair::for_sequence(&spans, x.tokens.len(), offset, 1.0 / b)?);
                    offset += x.tokens.len();
                }
                let v = span_loss_graph(&mut g, s, t, &pairs)?;
                parts.span = g.value(v).item()?;
                span_var = Some(v);
            }
        }

        for (term, v) in [("sft", parts.sft), ("dac", parts.dac), ("span", parts.span)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, step });
            }
        }
        let total = weighted_total(&mut g, [(sft_var, w.sft), (dac_var, w.dac), (span_var, w.span)])?;
        let loss_total = total.map(|v| g.value(v).data()[0]).unwrap_or(0.0);
        let mut grad_norm = 0.0;
        if let Some(total) = total {
            g.backward(total)?;
            let mut vars: Vec<Var> = svars.clone();
            if self.train_subnet {
                vars.extend(subvars.as_ref().expect("subnet vars"));
            }
            let grads: Vec<Option<&Tensor>> = vars.iter().map(|&v| g.grad(v)).collect();
            let mut params: Vec<&mut Tensor> = self.student.params_mut().tensors_mut().iter_mut().collect();
            if self.train_subnet {
                params.extend(self.subnet.as_mut().expect("subnet").params_mut().tensors_mut().iter_mut());
            }
            grad_norm = self.adam.step(&mut params, &grads);
        }
        Ok(MetricsRecord {
            step,
            epoch: 0,
            loss_sft: parts.sft,
            loss_dac: parts.dac,
            loss_span: parts.span,
            loss_total,
            validation_loss: None,
            validation_rouge: None,
            p_gen: self.sampler.as_ref().map_or(1.0, Sampler::p_gen),
            corrected_fraction: stats.corrected_fraction(),
            buffer_fallback: stats.buffer_fallback,
            grad_norm,
            wallclock: 0.0,
        })
    }
}

fn append_samples(path: &Path, samples: &[GeneratedSample]) -> Result<()> {
    let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result of one objective in a loss comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub loss: Divergence,
    pub best_epoch: usize,
    pub validation_loss: f64,
    pub rouge: RougeScore,
    pub per_seed_f1: Vec<f64>,
}

/// Distills one student per objective from the same initialization and
/// scores each on `eval_examples` over `eval_seeds`. With `artifacts` set,
/// each run writes its checkpoint and metrics to `artifacts/<loss>/`.
#[allow(clippy::too_many_arguments)]
pub fn compare_losses(
    config: &TrainConfig,
    losses: &[Divergence],
    teacher: &TransformerLm,
    student_init: &TransformerLm,
    data: &TrainData,
    eval_examples: &[Example],
    eval_seeds: &[u64],
    eval: &EvalConfig,
    artifacts: Option<&Path>,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(losses.len());
    for &loss in losses {
        let cfg = TrainConfig {
            divergence: loss,
            ..config.clone()
        };
        let files = match artifacts {
            Some(dir) => {
                let dir = dir.join(loss.to_string());
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                RunFiles {
                    checkpoint: Some(dir.join("checkpoint.bin")),
                    metrics: Some(dir.join("metrics.jsonl")),
                    samples: None,
                }
            }
            None => RunFiles::default(),
        };
        let out = distill(&cfg, teacher, student_init.clone(), data, &files)?;
        let report = evaluate_multiseed(&out.model, eval_examples, eval_seeds, eval)?;
        rows.push(ComparisonRow {
            loss,
            best_epoch: out.best_epoch,
            validation_loss: out.validation_history[out.best_epoch],
            rouge: report.mean,
            per_seed_f1: report.per_seed.iter().map(|s| s.score.f1).collect(),
        });
    }
    Ok(rows)
}
