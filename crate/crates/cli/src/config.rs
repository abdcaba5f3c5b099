//! Run configuration resolved from defaults, an optional JSON file and
//! command-line flags, in increasing order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mgsr_core::divergences::{ClipMode, DacComponents, Divergence, LossWeights};
use mgsr_core::eval::{GrammarConfig, DEFAULT_SEEDS};
use mgsr_core::lm::DecodeMode;
use mgsr_core::scrg::PolicyKind;
use mgsr_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a subcommand needs besides input paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Context length of freshly initialized models.
    pub context_len: usize,
    pub eval_seeds: Vec<u64>,
    pub eval_max_len: usize,
    pub eval_mode: DecodeMode,
    pub train_size: usize,
    pub test_size: usize,
    pub grammar: GrammarConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            context_len: 32,
            eval_seeds: DEFAULT_SEEDS.to_vec(),
            eval_max_len: 16,
            eval_mode: DecodeMode::Sample { temperature: 1.0 },
            train_size: 10_000,
            test_size: 500,
            grammar: GrammarConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_file(path)?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid configuration", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.train.seed()
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and sampling.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Parent directory of the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

impl CommonArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.train.seeds = vec![seed];
        }
    }
}

/// Training-set inputs.
#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    /// Training pool; the validation split is taken from its tail.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Gold span annotations for the corpus.
    #[arg(long, value_name = "PATH")]
    pub spans: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    /// Part-of-speech lexicon; defaults to `lexicon.txt` next to the vocabulary.
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
}

/// Training hyperparameters exposed as flags.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// fixed, student, teacher, mixed:R, off, scrg-on or scrg-off.
    #[arg(long, value_name = "POLICY")]
    pub policy: Option<PolicyKind>,
    /// fkl, rkl, skl, jsd, tvd, sfkl, srkl or dackl.
    #[arg(long, value_name = "LOSS")]
    pub loss: Option<Divergence>,
    /// Weights of the supervised, token and span terms.
    #[arg(long, value_name = "A,B,C", value_parser = parse_weights)]
    pub loss_weights: Option<LossWeights>,
    /// hard or soft:TAU.
    #[arg(long, value_name = "MODE")]
    pub clip_mode: Option<ClipMode>,
    /// both, high-density or target.
    #[arg(long, value_name = "SET")]
    pub dac_components: Option<DacComponents>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(p) = self.policy {
            t.policy = p;
        }
        if let Some(l) = self.loss {
            t.divergence = l;
        }
        if let Some(w) = self.loss_weights {
            t.loss_weights = w;
        }
        if let Some(c) = self.clip_mode {
            t.clip_mode = c;
        }
        if let Some(d) = self.dac_components {
            t.dac_components = d;
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(lr) = self.lr {
            t.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
    }
}

/// Evaluation seed list.
#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    /// Comma-separated evaluation seeds.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl EvalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.seeds {
            cfg.eval_seeds = s.clone();
        }
    }
}

fn parse_weights(s: &str) -> std::result::Result<LossWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [a, b, c] = parts[..] else {
        return Err(format!("expected three comma-separated weights, got {}", parts.len()));
    };
    LossWeights::new(a, b, c).map_err(|e| e.to_string())
}

/// Reads a whole file, naming the path when it is missing.
pub fn read_file(path: &Path) -> Result<String> {
    require_file(path)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}

/// Creates `<out>/<hash>-<timestamp>`, where the hash covers the command,
/// the resolved configuration and the input paths, and writes the
/// configuration into it.
pub fn create_run_dir(out: &Path, command: &str, cfg: &RunConfig, inputs: &[(&str, Option<&Path>)]) -> Result<PathBuf> {
    let inputs: serde_json::Map<String, serde_json::Value> = inputs
        .iter()
        .filter_map(|(k, p)| p.map(|p| ((*k).to_owned(), p.display().to_string().into())))
        .collect();
    let record = serde_json::json!({ "command": command, "config": cfg, "inputs": inputs });
    let text = serde_json::to_string_pretty(&record)?;
    let digest = Sha256::digest(text.as_bytes());
    let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = out.join(format!("{hash}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.json"), text + "\n").with_context(|| format!("writing {}", dir.display()))?;
    Ok(dir)
}
