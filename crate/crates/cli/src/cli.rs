use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use regimerl::agents::{Trainer, Variant};
use regimerl::env::RewardMode;
use regimerl::RegimeKind;

#[derive(Debug, Parser)]
#[command(
    name = "regimerl",
    version,
    about = "Regime detection, regime-switching simulation and policy evaluation"
)]
pub struct Cli {
    /// Worker threads for parallel sections (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-regime return panel.
    Synth(SynthArgs),
    /// Fit a regime model and write posteriors and crisis alignment.
    Detect(DetectArgs),
    /// Regime-switching Monte Carlo of fixed-weight strategies.
    Simulate(SimulateArgs),
    /// Train an allocation policy.
    Train(TrainArgs),
    /// Evaluate a policy or baseline on the held-out segment.
    Backtest(BacktestArgs),
    /// Train and evaluate environment ablations over several seeds.
    Ablate(AblateArgs),
    /// ANOVA, pairwise mean test, mutual information and utilities by regime.
    Stats(StatsArgs),
    /// detect → simulate → train → backtest → stats into one directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct FeatureArgs {
    /// Rolling window (years) for the detection features.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 96)]
    pub years: usize,
    #[arg(long, default_value_t = 1928)]
    pub start_year: i32,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write the true regime label of every year to this CSV.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Return panel CSV: a `year` column followed by one column per asset.
    #[arg(long)]
    pub input: PathBuf,
    /// Regime model family: kmeans, gmm or hmm.
    #[arg(long)]
    pub model: Option<RegimeKind>,
    /// Number of regimes.
    #[arg(long)]
    pub k: Option<usize>,
    /// EM / Lloyd iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Convergence tolerance on the objective.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Comma-separated crisis years for the alignment report.
    #[arg(long, value_delimiter = ',')]
    pub crisis_years: Option<Vec<i32>>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelInput {
    /// Return panel CSV: a `year` column followed by one column per asset.
    #[arg(long)]
    pub input: PathBuf,
    /// Regime model JSON written by `detect`.
    #[arg(long)]
    pub regimes: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelInput,
    /// Horizon in years; repeat for several.
    #[arg(long = "horizon")]
    pub horizons: Vec<usize>,
    /// Monte Carlo paths per horizon and strategy.
    #[arg(long)]
    pub paths: Option<usize>,
    /// `equal`, `sharpe`, `NAME=w1,w2,...` or `file:PATH` (JSON object of name → weights); repeatable.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    /// Drive stress transitions from the risk premium and yield spread.
    #[arg(long = "macro")]
    pub macro_driven: bool,
    /// Transition source: `model` (HMM only) or `empirical` (label counts with add-one smoothing).
    #[arg(long)]
    pub transitions: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EnvFlags {
    /// `sharpe_step` or `regime_aware`.
    #[arg(long)]
    pub reward_mode: Option<RewardMode>,
    /// Disable reward clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Disable the transaction-cost penalty.
    #[arg(long)]
    pub no_cost: bool,
    /// Disable periodic capital resets.
    #[arg(long)]
    pub no_reset: bool,
    /// Disable capital shocks.
    #[arg(long)]
    pub no_shock: bool,
    /// Fraction of the aligned sample used for training; the rest is held out.
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// `reinforce` or `cem`.
    #[arg(long)]
    pub trainer: Option<Trainer>,
    /// Environment steps budget.
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Episodes per REINFORCE update.
    #[arg(long)]
    pub batch_episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub env: EnvFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub env: EnvFlags,
    /// Policy JSON path, `equal_weight` or `sharpe_opt`.
    #[arg(long)]
    pub policy: String,
    /// Segment to evaluate: `test` (default), `train` or `all`.
    #[arg(long, default_value = "test")]
    pub segment: String,
    /// Rolling CAGR window in years.
    #[arg(long)]
    pub cagr_window: Option<usize>,
    /// Also write crisis-year spans for plotting next to the CAGR series.
    #[arg(long)]
    pub stress_overlay: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub env: EnvFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comma-separated: noclip, nocost, noreset, noshock (baseline always runs).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelInput,
    /// Asset whose returns are tested (default: the equity column, else the first).
    #[arg(long)]
    pub asset: Option<String>,
    /// Quantile bins for mutual information.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub crra_gamma: Option<f64>,
    #[arg(long)]
    pub cara_alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Return panel CSV: a `year` column followed by one column per asset.
    #[arg(long)]
    pub input: PathBuf,
    /// Regime model family: kmeans, gmm or hmm.
    #[arg(long)]
    pub model: Option<RegimeKind>,
    /// Number of regimes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Horizon in years; repeat for several.
    #[arg(long = "horizon")]
    pub horizons: Vec<usize>,
    /// Monte Carlo paths per horizon and strategy.
    #[arg(long)]
    pub paths: Option<usize>,
    #[command(flatten)]
    pub env: EnvFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}
