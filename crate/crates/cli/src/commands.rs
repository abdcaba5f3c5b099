//! Subcommand implementations. Each resolves its configuration, creates a
//! run directory and writes every artifact inside it.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use mgsr_core::checkpoint::Checkpoint;
use mgsr_core::data::{derive_seed, Corpus, Example, Vocab};
use mgsr_core::divergences::{dac_clip, predict_quantiles, ClipMode, Divergence, QuantilePair};
use mgsr_core::eval::{
    evaluate_multiseed, export_density, write_dataset, write_eval_dump, DatasetFiles, EvalConfig, MultiSeedReport,
};
use mgsr_core::lm::{generate, DecodeMode, ModelConfig, NextTokenModel, TransformerLm};
use mgsr_core::spans::{load_annotations, Lexicon, SpanAnnotation};
use mgsr_core::trainer::{self, RunFiles, TrainData, TrainOutcome};
use serde_json::json;

use crate::config::{create_run_dir, read_file, require_file, DataArgs, RunConfig};
use crate::output::{fmt, table, write_json};
use crate::{Arch, Command};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus {
            common,
            train_size,
            test_size,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(n) = train_size {
                cfg.train_size = n;
            }
            if let Some(n) = test_size {
                cfg.test_size = n;
            }
            gen_corpus(&cfg, &common.out)
        }
        Command::TrainTeacher {
            common,
            data,
            train,
            arch,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            train.apply(&mut cfg);
            train_teacher(&cfg, &common.out, &data, arch)
        }
        Command::Distill {
            common,
            data,
            train,
            teacher,
            student,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            train.apply(&mut cfg);
            distill(&cfg, &common.out, &data, &teacher, student.as_deref())
        }
        Command::Evaluate {
            common,
            model,
            corpus,
            vocab,
            eval,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            eval.apply(&mut cfg);
            evaluate(&cfg, &common.out, model.path(), &corpus, &vocab)
        }
        Command::CompareLosses {
            common,
            data,
            train,
            teacher,
            student,
            test,
            eval,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            train.apply(&mut cfg);
            eval.apply(&mut cfg);
            compare_losses(&cfg, &common.out, &data, &teacher, student.as_deref(), test.as_deref())
        }
        Command::InspectDac {
            common,
            teacher,
            student,
            corpus,
            vocab,
            quantiles,
            examples,
            positions,
            grid,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            let fixed = quantiles.as_deref().map(parse_quantiles).transpose()?;
            let inspect = Inspect {
                teacher: &teacher,
                student: student.as_deref(),
                corpus: &corpus,
                vocab: &vocab,
                fixed,
                examples,
                positions: positions.as_deref(),
                grid,
            };
            inspect_dac(&cfg, &common.out, &inspect)
        }
        Command::Generate {
            common,
            model,
            prompts,
            vocab,
            max_len,
            greedy,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(n) = max_len {
                cfg.eval_max_len = n;
            }
            if greedy {
                cfg.eval_mode = DecodeMode::Greedy;
            }
            generate_completions(&cfg, &common.out, model.path(), &prompts, &vocab)
        }
    }
}

fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = create_run_dir(out, "gen-corpus", cfg, &[])?;
    write_dataset(&dir, cfg.seed(), cfg.train_size, cfg.test_size, &cfg.grammar)?;
    let vocab = Vocab::load(&dir.join(DatasetFiles::VOCAB))?;
    let files = [
        DatasetFiles::VOCAB,
        DatasetFiles::LEXICON,
        DatasetFiles::TRAIN,
        DatasetFiles::TRAIN_SPANS,
        DatasetFiles::TEST,
        DatasetFiles::TEST_SPANS,
    ];
    let rows: Vec<Vec<String>> = files.iter().map(|f| vec![f.to_string(), dir.join(f).display().to_string()]).collect();
    println!("{}", table(&["file", "path"], &rows));
    println!("train {} / test {} samples, vocabulary {}", cfg.train_size, cfg.test_size, vocab.len());
    let paths: BTreeMap<&str, String> = files.iter().map(|f| (*f, dir.join(f).display().to_string())).collect();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "run_dir": dir,
            "files": paths,
            "train_size": cfg.train_size,
            "test_size": cfg.test_size,
            "vocab_size": vocab.len(),
        }),
    )?;
    println!("run directory: {}", dir.display());
    Ok(())
}

/// Loaded training inputs.
struct Dataset {
    vocab: Vocab,
    lexicon: Option<Lexicon>,
    train: Vec<Example>,
    validation: Vec<Example>,
    spans: Option<BTreeMap<u64, SpanAnnotation>>,
}

impl Dataset {
    fn load(args: &DataArgs, cfg: &RunConfig) -> Result<Self> {
        let vocab = load_vocab(&args.vocab)?;
        let corpus = load_corpus(&args.corpus, &vocab)?;
        let lexicon_path = match &args.lexicon {
            Some(p) => {
                require_file(p)?;
                Some(p.clone())
            }
            None => args
                .vocab
                .parent()
                .map(|d| d.join(DatasetFiles::LEXICON))
                .filter(|p| p.is_file()),
        };
        let lexicon = lexicon_path.as_deref().map(Lexicon::load).transpose()?;
        let spans = match &args.spans {
            Some(p) => {
                require_file(p)?;
                Some(load_annotations(p)?)
            }
            None => None,
        };
        let (train, validation) = corpus.split_validation(cfg.train.validation_fraction)?;
        Ok(Self {
            vocab,
            lexicon,
            train,
            validation,
            spans,
        })
    }

    fn train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            validation: &self.validation,
            spans: self.spans.as_ref(),
            lexicon: self.lexicon.as_ref(),
            eos: self.vocab.eos(),
            pad: self.vocab.pad(),
        }
    }

    fn eval_config(&self, cfg: &RunConfig) -> EvalConfig {
        EvalConfig {
            mode: cfg.eval_mode,
            max_len: cfg.eval_max_len,
            eos: self.vocab.eos(),
            pad: self.vocab.pad(),
        }
    }
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    require_file(path)?;
    Ok(Vocab::load(path)?)
}

fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Corpus> {
    require_file(path)?;
    Ok(Corpus::load(path, vocab)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path)?;
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run_files(dir: &Path) -> RunFiles {
    RunFiles {
        checkpoint: Some(dir.join("checkpoint.bin")),
        metrics: Some(dir.join("metrics.jsonl")),
        samples: Some(dir.join("samples.jsonl")),
    }
}

fn report_training(dir: &Path, out: &TrainOutcome) -> Result<()> {
    let rows: Vec<Vec<String>> = out
        .validation_history
        .iter()
        .enumerate()
        .map(|(epoch, loss)| {
            let rouge = out.rouge_history.get(epoch).map(|&r| fmt(r)).unwrap_or_else(|| "-".into());
            let best = if epoch == out.best_epoch { "*" } else { "" };
            vec![epoch.to_string(), fmt(*loss), rouge, best.into()]
        })
        .collect();
    println!("{}", table(&["epoch", "validation loss", "validation rouge-l", "best"], &rows));
    write_json(
        &dir.join("summary.json"),
        &json!({
            "run_dir": dir,
            "checkpoint": dir.join("checkpoint.bin"),
            "metrics": dir.join("metrics.jsonl"),
            "best_epoch": out.best_epoch,
            "validation_history": out.validation_history,
            "rouge_history": out.rouge_history,
            "final_step": out.metrics.last(),
        }),
    )?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn train_teacher(cfg: &RunConfig, out: &Path, args: &DataArgs, arch: Arch) -> Result<()> {
    let data = Dataset::load(args, cfg)?;
    let (m, ctx, seed) = (data.vocab.len(), cfg.context_len, cfg.seed());
    let model_cfg = match arch {
        Arch::Teacher => ModelConfig::teacher(m, ctx, seed),
        Arch::Student => ModelConfig::student(m, ctx, seed),
    };
    let model = TransformerLm::new(model_cfg)?;
    let dir = create_run_dir(out, "train-teacher", cfg, &data_inputs(args))?;
    info!("training {} parameters", model.param_count());
    let outcome = trainer::train_teacher(&cfg.train, model, &data.train_data(), &run_files(&dir))?;
    report_training(&dir, &outcome)
}

fn data_inputs(args: &DataArgs) -> Vec<(&'static str, Option<&Path>)> {
    vec![
        ("corpus", Some(args.corpus.as_path())),
        ("spans", args.spans.as_deref()),
        ("vocab", Some(args.vocab.as_path())),
        ("lexicon", args.lexicon.as_deref()),
    ]
}

/// The student checkpoint at `path`, or a fresh student shaped like the
/// teacher's vocabulary and context.
fn initial_student(path: Option<&Path>, teacher: &TransformerLm, seed: u64) -> Result<TransformerLm> {
    match path {
        Some(p) => Ok(load_checkpoint(p)?.model),
        None => {
            let t = teacher.config();
            Ok(TransformerLm::new(ModelConfig::student(t.vocab_size, t.context_len, seed))?)
        }
    }
}

fn distill(cfg: &RunConfig, out: &Path, args: &DataArgs, teacher: &Path, student: Option<&Path>) -> Result<()> {
    let data = Dataset::load(args, cfg)?;
    let teacher_model = load_checkpoint(teacher)?.model;
    let init = initial_student(student, &teacher_model, cfg.seed())?;
    let mut inputs = data_inputs(args);
    inputs.push(("teacher", Some(teacher)));
    inputs.push(("student", student));
    let dir = create_run_dir(out, "distill", cfg, &inputs)?;
    let outcome = trainer::distill(&cfg.train, &teacher_model, init, &data.train_data(), &run_files(&dir))?;
    report_training(&dir, &outcome)
}

fn print_report(report: &MultiSeedReport) {
    let mut rows: Vec<Vec<String>> = report
        .per_seed
        .iter()
        .map(|s| {
            vec![
                s.seed.to_string(),
                fmt(s.score.precision),
                fmt(s.score.recall),
                fmt(s.score.f1),
            ]
        })
        .collect();
    rows.push(vec![
        "mean".into(),
        fmt(report.mean.precision),
        fmt(report.mean.recall),
        fmt(report.mean.f1),
    ]);
    println!("{}", table(&["seed", "precision", "recall", "rouge-l f1"], &rows));
}

fn evaluate(cfg: &RunConfig, out: &Path, model: &Path, corpus: &Path, vocab: &Path) -> Result<()> {
    let vocab_data = load_vocab(vocab)?;
    let test = load_corpus(corpus, &vocab_data)?;
    let ck = load_checkpoint(model)?;
    let dir = create_run_dir(
        out,
        "evaluate",
        cfg,
        &[("model", Some(model)), ("corpus", Some(corpus)), ("vocab", Some(vocab))],
    )?;
    let eval = EvalConfig {
        mode: cfg.eval_mode,
        max_len: cfg.eval_max_len,
        eos: vocab_data.eos(),
        pad: vocab_data.pad(),
    };
    let report = evaluate_multiseed(&ck.model, &test.examples, &cfg.eval_seeds, &eval)?;
    print_report(&report);
    write_eval_dump(&dir.join("generations.jsonl"), &report.records, |ids| {
        vocab_data.decode_words(ids).join(" ")
    })?;
    write_json(&dir.join("report.json"), &report)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn compare_losses(
    cfg: &RunConfig,
    out: &Path,
    args: &DataArgs,
    teacher: &Path,
    student: Option<&Path>,
    test: Option<&Path>,
) -> Result<()> {
    let data = Dataset::load(args, cfg)?;
    let teacher_model = load_checkpoint(teacher)?.model;
    let init = initial_student(student, &teacher_model, cfg.seed())?;
    let eval_examples = match test {
        Some(p) => load_corpus(p, &data.vocab)?.examples,
        None => data.validation.clone(),
    };
    let mut inputs = data_inputs(args);
    inputs.extend([("teacher", Some(teacher)), ("student", student), ("test", test)]);
    let dir = create_run_dir(out, "compare-losses", cfg, &inputs)?;
    let rows = trainer::compare_losses(
        &cfg.train,
        &Divergence::ALL,
        &teacher_model,
        &init,
        &data.train_data(),
        &eval_examples,
        &cfg.eval_seeds,
        &data.eval_config(cfg),
        Some(&dir),
    )?;
    let text_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.loss.to_string(),
                r.best_epoch.to_string(),
                fmt(r.validation_loss),
                fmt(r.rouge.f1),
                r.per_seed_f1.iter().map(|&f| fmt(f)).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    println!(
        "{}",
        table(&["loss", "best epoch", "validation loss", "rouge-l f1", "per-seed f1"], &text_rows)
    );
    write_json(&dir.join("comparison.json"), &rows)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn parse_quantiles(s: &str) -> Result<QuantilePair> {
    let parts: Vec<&str> = s.split(',').collect();
    let [u, l] = parts[..] else {
        bail!("--quantiles expects U,L, got {s:?}");
    };
    let u: f64 = u.trim().parse().with_context(|| format!("--quantiles: {u:?}"))?;
    let l: f64 = l.trim().parse().with_context(|| format!("--quantiles: {l:?}"))?;
    Ok(QuantilePair::new(u, l)?)
}

struct Inspect<'a> {
    teacher: &'a Path,
    student: Option<&'a Path>,
    corpus: &'a Path,
    vocab: &'a Path,
    fixed: Option<QuantilePair>,
    examples: usize,
    positions: Option<&'a [usize]>,
    grid: usize,
}

fn inspect_dac(cfg: &RunConfig, out: &Path, args: &Inspect) -> Result<()> {
    let vocab = load_vocab(args.vocab)?;
    let corpus = load_corpus(args.corpus, &vocab)?;
    let teacher = load_checkpoint(args.teacher)?.model;
    let student = args.student.map(load_checkpoint).transpose()?;
    if args.fixed.is_none() && student.as_ref().and_then(|s| s.subnet.as_ref()).is_none() {
        bail!("no sub-network available: pass a student checkpoint that has one, or --quantiles U,L");
    }
    let dir = create_run_dir(
        out,
        "inspect-dac",
        cfg,
        &[
            ("teacher", Some(args.teacher)),
            ("student", args.student),
            ("corpus", Some(args.corpus)),
            ("vocab", Some(args.vocab)),
        ],
    )?;
    let eos = vocab.eos();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for ex in corpus.examples.iter().take(args.examples) {
        let target = ex.target(eos);
        let pair = [(ex.prompt.as_slice(), target.as_slice())];
        let tdists = teacher.response_dists(&pair)?.remove(0);
        let sdists = match &student {
            Some(s) => Some(s.model.response_dists(&pair)?.remove(0)),
            None => None,
        };
        let positions: Vec<usize> = match args.positions {
            Some(p) => p.iter().copied().filter(|&i| i < target.len()).collect(),
            None => (0..target.len()).collect(),
        };
        for pos in positions {
            let t = &tdists[pos];
            let q = match (args.fixed, &student, &sdists) {
                (Some(q), _, _) => q,
                (None, Some(ck), Some(sd)) => {
                    predict_quantiles(ck.subnet.as_ref().expect("checked above"), t, &sd[pos])?
                }
                _ => unreachable!("bounds source checked above"),
            };
            let sel = dac_clip(t, q, ClipMode::Hard);
            let export = export_density(t, &sel, args.grid)?;
            let file = format!("density_{}_{pos}.csv", ex.id);
            export.write_csv(&dir.join(&file))?;
            let token = vocab.token(target[pos]).unwrap_or("<?>").to_owned();
            rows.push(vec![
                ex.id.to_string(),
                pos.to_string(),
                token.clone(),
                fmt(q.u),
                fmt(q.l),
                sel.indices.len().to_string(),
                format!("{:.2e}", export.bandwidth),
                file.clone(),
            ]);
            entries.push(json!({
                "example": ex.id,
                "position": pos,
                "token": token,
                "u": q.u,
                "l": q.l,
                "selected": sel.indices,
                "bandwidth": export.bandwidth,
                "csv": file,
            }));
        }
    }
    println!(
        "{}",
        table(&["example", "position", "token", "u", "l", "selected", "bandwidth", "file"], &rows)
    );
    write_json(&dir.join("inspect.json"), &entries)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn generate_completions(cfg: &RunConfig, out: &Path, model: &Path, prompts: &Path, vocab: &Path) -> Result<()> {
    let vocab_data = load_vocab(vocab)?;
    let text = read_file(prompts)?;
    let ck = load_checkpoint(model)?;
    let mut encoded = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let ids = vocab_data
            .encode(line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", prompts.display(), i + 1))?;
        encoded.push((line.trim().to_owned(), ids));
    }
    let dir = create_run_dir(
        out,
        "generate",
        cfg,
        &[("model", Some(model)), ("prompts", Some(prompts)), ("vocab", Some(vocab))],
    )?;
    let eos = vocab_data.eos();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (i, (prompt, ids)) in encoded.iter().enumerate() {
        let seed = derive_seed(cfg.seed(), &[i as u64]);
        let mut tokens = generate(&ck.model, ids, cfg.eval_max_len, cfg.eval_mode, eos, seed)?;
        if tokens.last() == Some(&eos) {
            tokens.pop();
        }
        let completion = vocab_data.decode_words(&tokens).join(" ");
        rows.push(vec![prompt.clone(), completion.clone()]);
        entries.push(json!({ "prompt": prompt, "completion": completion, "seed": seed }));
    }
    println!("{}", table(&["prompt", "completion"], &rows));
    write_json(&dir.join("completions.json"), &entries)?;
    println!("run directory: {}", dir.display());
    Ok(())
}
