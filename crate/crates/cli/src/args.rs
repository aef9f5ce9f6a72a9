use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covid_am::model::DEFAULT_ALPHA;
use covid_am::selection::{
    self, SelectionConfig, DEFAULT_KEEP_FRACTION, DEFAULT_K_TEST, DEFAULT_K_TRAIN,
};
use covid_am::trainer::TrainTarget;
use covid_am::voting::{Scheme, DEFAULT_EXTREME_FRACTION, DEFAULT_THRESHOLD};

#[derive(Debug, Parser)]
#[command(
    name = "covid-am",
    version,
    about = "CT slice selection, attention-merge slice classifier and patient-level voting",
    args_override_self = true
)]
pub struct Cli {
    /// JSON file of flat `flag-name: value` pairs; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for data generation, initialisation and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Report the slices chosen for each patient.
    Select(SelectArgs),
    /// Train the slice model (and the attention aggregator).
    Train(TrainArgs),
    /// Per-patient predictions for a directory of volumes.
    Predict(PredictArgs),
    /// AUC / Macro-F1 report for a labelled directory.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Select(_) => "select",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n_patients: usize,
    #[arg(long, default_value_t = 60)]
    pub min_slices: usize,
    #[arg(long, default_value_t = 120)]
    pub max_slices: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0.7)]
    pub lesion_intensity: f64,
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
    /// Share of patients placed in the validation split.
    #[arg(long, default_value_t = 0.5)]
    pub val_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// Share of slices kept by lung area before equal spacing.
    #[arg(long, default_value_t = DEFAULT_KEEP_FRACTION)]
    pub keep_fraction: f64,
    /// Slices per patient in training mode.
    #[arg(long, default_value_t = DEFAULT_K_TRAIN)]
    pub k_train: usize,
    /// Slices per patient in test mode.
    #[arg(long, default_value_t = DEFAULT_K_TEST)]
    pub k_test: usize,
}

impl SelectionArgs {
    pub fn config(&self) -> SelectionConfig {
        SelectionConfig {
            keep_fraction: self.keep_fraction,
            k_train: self.k_train,
            k_test: self.k_test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VoteArgs {
    /// Decision threshold (strict `>`).
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Share of slices taken from each end for ranked voting.
    #[arg(long, default_value_t = DEFAULT_EXTREME_FRACTION)]
    pub extreme_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Train,
    Test,
}

impl From<ModeArg> for selection::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => selection::Mode::Train,
            ModeArg::Test => selection::Mode::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Directory of .svol volumes.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Test)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    HeadOnly,
    HeadAndSha,
}

impl From<TargetArg> for TrainTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::HeadOnly => TrainTarget::HeadOnly,
            TargetArg::HeadAndSha => TrainTarget::HeadAndSha,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of .svol volumes.
    #[arg(long)]
    pub data: PathBuf,
    /// Label table (defaults to DATA/labels.csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output weights file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Output history CSV (defaults to history.csv beside the weights).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::HeadAndSha)]
    pub scheme_to_train: TargetArg,
    #[arg(long, default_value_t = 1e-7)]
    pub clamp_eps: f64,
    /// Aggregator training epochs.
    #[arg(long, default_value_t = 100)]
    pub sha_epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub sha_learning_rate: f64,
    /// Blend weight of the unattended features (the attended ones get 1 - alpha).
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Simple,
    Ranked,
    Learner,
    All,
}

impl SchemeArg {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeArg::Simple => vec![Scheme::Simple],
            SchemeArg::Ranked => vec![Scheme::Ranked],
            SchemeArg::Learner => vec![Scheme::Learner],
            SchemeArg::All => Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory of .svol volumes (labels not needed).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::Simple)]
    pub scheme: SchemeArg,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub vote: VoteArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of .svol volumes.
    #[arg(long)]
    pub data: PathBuf,
    /// Label table (defaults to DATA/labels.csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::All)]
    pub scheme: SchemeArg,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub vote: VoteArgs,
    /// Write the CSV report here (the key=value report always goes to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
