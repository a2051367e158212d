use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use seqmtl::config::{Preset, TrainConfig};
use seqmtl::fusion::FusionMode;
use seqmtl::heads::LossStrategy;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "seqmtl", version = env!("SEQMTL_BUILD_ID"), about = "Dual-encoder multitask NER + POS tagging")]
pub struct Cli {
    /// Log level for diagnostics on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the dev (default), train or test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every cell of a fusion × loss × regime grid.
    Ablate(AblateArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Per task/subset/split statistics of a data directory.
    InspectData(InspectArgs),
    /// Write a small generated corpus in the data layout.
    GenSynthetic(SyntheticArgs),
}

/// Flags shared by every command that trains. Flags override the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct RunFlags {
    /// Config file (`key = value` lines under `[model]`, `[training]`, `[data]`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `paper` or `desk`; resets the training section except the seed.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// `multiplicative` or `additive`.
    #[arg(long)]
    pub fusion: Option<FusionMode>,
    /// `sum` or `weighted`.
    #[arg(long)]
    pub loss: Option<LossStrategy>,
    /// NER weight of the weighted loss.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// POS weight of the weighted loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated subset keys, or `all`.
    #[arg(long)]
    pub subsets: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub data_root: Option<String>,
    /// Any other config key, as `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunFlags {
    /// Config file (or the paper preset), then `--preset`, then the other flags.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                TrainConfig::parse(&text)?
            }
            None => TrainConfig::default(),
        };
        if let Some(p) = self.preset {
            config.set("training.preset", p.as_str())?;
        }
        let mut apply = |key: &str, value: Option<String>| -> Result<(), CliError> {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
            Ok(())
        };
        apply("model.fusion", self.fusion.map(|f| f.to_string()))?;
        apply("training.loss", self.loss.map(|l| l.to_string()))?;
        apply("training.alpha", self.alpha.map(|v| v.to_string()))?;
        apply("training.beta", self.beta.map(|v| v.to_string()))?;
        apply("data.subsets", self.subsets.clone())?;
        apply("training.seed", self.seed.map(|v| v.to_string()))?;
        apply("training.epochs", self.epochs.map(|v| v.to_string()))?;
        apply("data.root", self.data_root.clone())?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            config.set(k.trim(), v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Replace an existing run directory with the same config hash and seed.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the data root stored in the checkpoint's config.
    #[arg(long)]
    pub data_root: Option<String>,
    /// Subsets to evaluate on; defaults to the run's target subset, else its
    /// training subsets.
    #[arg(long)]
    pub subsets: Option<String>,
    /// `train` or `dev`.
    #[arg(long, default_value = "dev")]
    pub split: String,
    /// Evaluate on the test split instead of `--split`.
    #[arg(long)]
    pub test: bool,
    /// Report file; defaults to `<checkpoint stem>.eval-<split>.tsv` beside the checkpoint.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Fusion modes of the grid.
    #[arg(long, value_delimiter = ',', default_value = "multiplicative,additive")]
    pub fusion_modes: Vec<FusionMode>,
    /// Loss strategies of the grid.
    #[arg(long, value_delimiter = ',', default_value = "weighted")]
    pub losses: Vec<LossStrategy>,
    /// Subset regimes: `all`, `single` or `single:<key>`.
    #[arg(long, value_delimiter = ',', default_value = "all,single")]
    pub regimes: Vec<String>,
    /// Report test-split metrics instead of dev.
    #[arg(long)]
    pub test: bool,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as a report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Add a check with a deliberately wrong backward; it must fail.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
