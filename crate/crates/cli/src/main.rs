//! `mgsr`: generate the synthetic corpus, train teachers, distill students,
//! compare objectives and evaluate, all from one binary.
//!
//! Exit codes: 0 on success, 1 on runtime errors such as missing files,
//! 2 on usage errors and 3 when training aborts on a non-finite loss.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{CommonArgs, DataArgs, EvalArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "mgsr", version, about = "Multi-granularity distillation of small language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus, test set, vocabulary, lexicon and spans.
    GenCorpus {
        #[command(flatten)]
        common: CommonArgs,
        /// Size of the training pool (validation included).
        #[arg(long, value_name = "N")]
        train_size: Option<usize>,
        #[arg(long, value_name = "N")]
        test_size: Option<usize>,
    },
    /// Supervised training of a fresh model on the corpus.
    TrainTeacher {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Architecture of the trained model.
        #[arg(long, value_enum, default_value_t = Arch::Teacher)]
        arch: Arch,
    },
    /// Distill a student from a trained teacher.
    Distill {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Teacher checkpoint.
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
        /// Initial student checkpoint; a fresh student is used otherwise.
        #[arg(long, value_name = "PATH")]
        student: Option<PathBuf>,
    },
    /// Multi-seed ROUGE-L of a model on a test corpus.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        vocab: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Distill one student per divergence and tabulate the results.
    CompareLosses {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
        #[arg(long, value_name = "PATH")]
        student: Option<PathBuf>,
        /// Evaluation corpus; the validation split is used otherwise.
        #[arg(long, value_name = "PATH")]
        test: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Export densities of original and clipped teacher distributions.
    InspectDac {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
        /// Student checkpoint whose sub-network predicts the bounds.
        #[arg(long, value_name = "PATH")]
        student: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        #[arg(long, value_name = "PATH")]
        vocab: PathBuf,
        /// Fixed bounds, used instead of a sub-network.
        #[arg(long, value_name = "U,L")]
        quantiles: Option<String>,
        /// Number of corpus examples to inspect.
        #[arg(long, value_name = "N", default_value_t = 3)]
        examples: usize,
        /// Response positions to inspect; all positions otherwise.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        positions: Option<Vec<usize>>,
        #[arg(long, value_name = "N", default_value_t = 200)]
        grid: usize,
    },
    /// Complete the prompts of a text file, one per line.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "PATH")]
        prompts: PathBuf,
        #[arg(long, value_name = "PATH")]
        vocab: PathBuf,
        #[arg(long, value_name = "N")]
        max_len: Option<usize>,
        /// Greedy decoding instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
}

/// The model a command reads: exactly one of the two flags.
#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    #[arg(long, value_name = "PATH")]
    teacher: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    student: Option<PathBuf>,
}

impl ModelArgs {
    fn path(&self) -> &std::path::Path {
        self.teacher
            .as_deref()
            .or(self.student.as_deref())
            .expect("clap enforces one model flag")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Teacher,
    Student,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let non_finite = err
        .chain()
        .filter_map(|e| e.downcast_ref::<mgsr_core::Error>())
        .any(|e| matches!(e, mgsr_core::Error::NonFiniteLoss { .. }));
    if non_finite {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
