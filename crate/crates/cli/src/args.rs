//! Flag definitions. Every subcommand also takes `--config FILE`, a JSON
//! object whose keys are the long flag names; flags given on the command
//! line win over the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use reselm::elm::Activation;
use reselm::harness::ModelKind;
use reselm::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "reselm", version, about = "Residual-error sparse extreme learning machines")]
pub struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-signal synthetic dataset (features, labels, blocks).
    GenSynth(GenSynthArgs),
    /// Turn component time courses into functional-connectivity rows.
    Fc(FcArgs),
    /// Fit an ELM, RES-ELM or RP-ELM model and save it.
    Train(TrainArgs),
    /// Select hidden neurons without solving output weights.
    Prune(PruneArgs),
    /// Accuracy of a saved model on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Repeated-split grid search; writes a JSON report and CSV table.
    Sweep(SweepArgs),
    /// Pseudo-identity deviation curves and before/after pruning errors.
    Diagnose(DiagnoseArgs),
    /// Run the monotonicity and interlacing property suites.
    Verify(VerifyArgs),
}

/// Reads `path` as `T` (all fields optional) for overlaying under flags.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Fills every `None` field of `$flags` from `$file`.
macro_rules! overlay {
    ($flags:ident <- $file:ident: $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}
pub(crate) use overlay;

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON file with default values for this subcommand's flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct DataArgs {
    /// Features CSV (header f0,f1,…).
    #[arg(long, value_name = "CSV")]
    pub features: Option<PathBuf>,
    /// Labels CSV (header `label`, values 1 or 2).
    #[arg(long, value_name = "CSV")]
    pub labels: Option<PathBuf>,
    /// Block manifest JSON; defaults to one block over all columns.
    #[arg(long, value_name = "JSON")]
    pub blocks: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataFile {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub blocks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    /// Number of subjects.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Modality as NAME:WIDTH:INFORMATIVE; repeat for several blocks.
    #[arg(long = "modality", value_name = "NAME:WIDTH:INFORMATIVE")]
    pub modalities: Option<Vec<String>>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Distance between the two class means on informative columns.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenSynthFile {
    pub subjects: Option<usize>,
    #[serde(rename = "modality")]
    pub modalities: Option<Vec<String>>,
    pub noise: Option<f64>,
    pub separation: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FcArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    /// Time-course CSVs (C rows × T columns, no header), one per subject.
    #[arg(long = "input", value_name = "CSV", num_args = 1..)]
    pub inputs: Option<Vec<PathBuf>>,
    /// Expected component count C; files with another count are rejected.
    #[arg(long)]
    pub components: Option<usize>,
    /// Ages CSV (header `age`, one row per input) to binarise into labels.
    #[arg(long, value_name = "CSV")]
    pub ages: Option<PathBuf>,
    /// |z| cut for age binarisation.
    #[arg(long)]
    pub z_cut: Option<f64>,
    /// Where to write labels when --ages is given.
    #[arg(long, value_name = "CSV")]
    pub labels_out: Option<PathBuf>,
    /// Features CSV to write.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FcFile {
    #[serde(rename = "input")]
    pub inputs: Option<Vec<PathBuf>>,
    pub components: Option<usize>,
    pub ages: Option<PathBuf>,
    pub z_cut: Option<f64>,
    pub labels_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// elm, res-elm or rp-elm.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// sigmoid or rbf.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Hidden-neuron pool size L.
    #[arg(long)]
    pub neurons: Option<usize>,
    /// Percent of the pool to keep (1–100).
    #[arg(long)]
    pub sp: Option<u32>,
    /// Truncation threshold for RES-ELM.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Ridge parameter.
    #[arg(long)]
    pub z: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelFile {
    pub model: Option<ModelKind>,
    pub activation: Option<Activation>,
    pub neurons: Option<usize>,
    pub sp: Option<u32>,
    pub epsilon: Option<f64>,
    pub z: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainFile {
    #[serde(flatten)]
    pub data: DataFile,
    #[serde(flatten)]
    pub model: ModelFile,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Selection JSON to write; printed to stdout when omitted.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

pub type PruneFile = TrainFile;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file written by `train`.
    #[arg(long, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    /// Write predicted labels here (labels CSV format).
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateFile {
    #[serde(flatten)]
    pub data: DataFile,
    pub model_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment config JSON (snake_case fields of the report's `config`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Models to compare, comma-separated.
    #[arg(long = "model", value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Neuron grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub neurons: Option<Vec<usize>>,
    /// Sparsity grid (percent), comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub sp: Option<Vec<u32>>,
    /// Epsilon grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Ridge grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub z: Option<Vec<f64>>,
    /// Repetitions per grid point.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset name used in the accuracy table.
    #[arg(long)]
    pub name: Option<String>,
    /// Use the full grids (300–2000 neurons, S_p 1–30) as the base.
    #[arg(long)]
    pub full_grid: bool,
    /// Run repetitions on one thread.
    #[arg(long)]
    pub sequential: bool,
    /// Report JSON to write; a .csv table, .jsonl log and .timings.json go
    /// next to it.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Pool sizes for the deviation curve, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub neurons: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also compare RES-ELM and random pruning at this sparsity.
    #[arg(long)]
    pub sp: Option<u32>,
    /// Pool size for the pruning comparison (default: largest curve size).
    #[arg(long)]
    pub prune_neurons: Option<usize>,
    /// Trials for the pruning comparison.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DiagnoseFile {
    #[serde(flatten)]
    pub data: DataFile,
    pub neurons: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub sp: Option<u32>,
    pub prune_neurons: Option<usize>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub cfg: ConfigArg,
    /// Monotonicity trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Interlacing trials.
    #[arg(long)]
    pub interlacing_trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VerifyFile {
    pub trials: Option<usize>,
    pub interlacing_trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}
