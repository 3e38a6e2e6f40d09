//! Command-line flags, config-file values and their resolution.
//!
//! Every subcommand has a flag struct whose fields are all optional and a
//! settings struct carrying defaults. Values resolve as flag, then the
//! command's `[section]` of the config file, then top-level config keys,
//! then the built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use bbscore::classifier::{DetectMode, PairMode};
use bbscore::harness::ShuffleKind;
use bbscore::nn::Activation;
use bbscore::storage::Format;
use bbscore::Negatives;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bbscore", version, about = "Brownian bridge coherence scoring")]
pub struct Cli {
    /// TOML file of key/value settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-document work (0 uses every core).
    #[arg(long, global = true, env = "BBSCORE_THREADS")]
    pub threads: Option<usize>,

    /// Container format for corpus files; inferred from the extension when absent.
    #[arg(long, global = true)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the bridge encoder on hidden-state sequences.
    TrainEncoder(TrainEncoderArgs),
    /// Estimate the diffusion coefficient of a corpus.
    EstimateSigma(EstimateArgs),
    /// Global and windowed BBScores per document.
    Score(ScoreArgs),
    /// Shuffle-test AUC and pairwise accuracy.
    ShuffleEval(ShuffleArgs),
    /// Shuffle-test AUC across a grid of diffusion coefficients.
    SigmaSweep(SweepArgs),
    /// Original-versus-shuffled discrimination from BBScore features.
    Classify(ClassifyArgs),
    /// Match test corpora to source corpora by diffusion-estimate distributions.
    DetectLlm(DetectArgs),
    /// Write simulated Brownian bridge trajectories.
    Simulate(SimulateArgs),
    /// Per-position mean and variance of resampled trajectories.
    Trajectories(TrajectoryArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainEncoder(_) => "train-encoder",
            Command::EstimateSigma(_) => "estimate-sigma",
            Command::Score(_) => "score",
            Command::ShuffleEval(_) => "shuffle-eval",
            Command::SigmaSweep(_) => "sigma-sweep",
            Command::Classify(_) => "classify",
            Command::DetectLlm(_) => "detect-llm",
            Command::Simulate(_) => "simulate",
            Command::Trajectories(_) => "trajectories",
        }
    }
}

/// Runtime options shared by every command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalSettings {
    pub threads: Option<usize>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct InputArgs {
    /// Corpus file (BBX or JSONL).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Encoder weights; without one the input rows are used as latents.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<PathBuf>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SigmaArgs {
    /// Diffusion coefficient to score with.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    /// Report written by estimate-sigma.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ShuffleTaskArgs {
    /// `global` block shuffles or `local` window shuffles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ShuffleKind>,
    /// Block size of global shuffles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    /// Number of windows of local shuffles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    /// Shuffled copies per document.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_shuffles: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Also write the pair manifest (JSONL) here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuffleTaskSettings {
    pub kind: ShuffleKind,
    pub b: usize,
    pub windows: usize,
    pub n_shuffles: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
}

impl Default for ShuffleTaskSettings {
    fn default() -> Self {
        Self {
            kind: ShuffleKind::GlobalBlock,
            b: 1,
            windows: 1,
            n_shuffles: 20,
            seed: 0,
            manifest: None,
        }
    }
}

impl ShuffleTaskSettings {
    /// Block size or window count, depending on the kind.
    pub fn param(&self) -> usize {
        match self.kind {
            ShuffleKind::GlobalBlock => self.b,
            ShuffleKind::LocalWindow => self.windows,
        }
    }

    pub fn task_name(&self) -> String {
        match self.kind {
            ShuffleKind::GlobalBlock => format!("shuffle-global-b{}", self.b),
            ShuffleKind::LocalWindow => format!("shuffle-local-w{}", self.windows),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.param() == 0 {
            return Err(CliError::Usage(
                "--b and --windows must be at least 1".into(),
            ));
        }
        if self.n_shuffles == 0 {
            return Err(CliError::Usage("--n-shuffles must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainEncoderArgs {
    /// Hidden-state corpus.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Encoder weights file to write.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Training report (loss trace) destination.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
    /// `relu` or `tanh`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    /// `in_batch` or `cross_doc_only`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives: Option<Negatives>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainEncoderSettings {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub negatives: Negatives,
    pub seed: u64,
}

impl Default for TrainEncoderSettings {
    fn default() -> Self {
        let d = bbscore::TrainConfig::default();
        Self {
            input: None,
            output: None,
            report: None,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            batch_size: d.batch_size,
            hidden_dim: d.hidden_dim,
            output_dim: d.output_dim,
            activation: d.activation,
            negatives: d.negatives,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateSettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    /// Comma-separated half-widths of windowed scores.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub sigma_sq: Option<f64>,
    pub sigma_file: Option<PathBuf>,
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ShuffleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub task: ShuffleTaskArgs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuffleSettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub sigma_sq: Option<f64>,
    pub sigma_file: Option<PathBuf>,
    #[serde(flatten)]
    pub task: ShuffleTaskSettings,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub task: ShuffleTaskArgs,
    /// Comma-separated diffusion coefficients.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Also write `sigma,auc` CSV here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

/// Nine points from 1e-2 to 1e2, evenly spaced in log scale.
pub fn default_grid() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub sigma_sq: Option<f64>,
    pub sigma_file: Option<PathBuf>,
    #[serde(flatten)]
    pub task: ShuffleTaskSettings,
    pub grid: Vec<f64>,
    pub csv: Option<PathBuf>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            input: None,
            encoder: None,
            output: None,
            sigma_sq: None,
            sigma_file: None,
            task: ShuffleTaskSettings::default(),
            grid: default_grid(),
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub task: ShuffleTaskArgs,
    /// `raw` compares global scores, `clf` uses the trained perceptron.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<PairMode>,
    /// Fraction of documents, in corpus order, used for training.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Write the trained perceptron here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    /// Use this perceptron instead of training one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifySettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub sigma_sq: Option<f64>,
    pub sigma_file: Option<PathBuf>,
    #[serde(flatten)]
    pub task: ShuffleTaskSettings,
    pub mode: PairMode,
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub model_out: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        let d = bbscore::classifier::Mlp3Config::default();
        Self {
            input: None,
            encoder: None,
            output: None,
            sigma_sq: None,
            sigma_file: None,
            task: ShuffleTaskSettings::default(),
            mode: PairMode::Clf,
            train_fraction: 0.5,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            batch_size: d.batch_size,
            model_out: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct DetectArgs {
    /// Source corpus as `label=path`; repeat for every source.
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub train: Vec<String>,
    /// Test corpus as `label=path`; a label naming a source marks it as the truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub test: Vec<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    /// `corpus` or `singleton`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DetectMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write the normalized distance matrix as CSV here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectSettings {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub encoder: Option<PathBuf>,
    pub top_k: usize,
    pub mode: DetectMode,
    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for DetectSettings {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            test: Vec::new(),
            encoder: None,
            top_k: 2,
            mode: DetectMode::Corpus,
            output: None,
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docs: Option<usize>,
    /// Rows per document.
    #[arg(long = "T", visible_alias = "len")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    /// Standard deviation of the Gaussian the endpoints are drawn from.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_scale: Option<f64>,
    /// Push every trajectory through a seeded random linear map into this many dims.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    pub docs: usize,
    pub len: usize,
    pub dim: usize,
    pub sigma_sq: f64,
    pub endpoint_scale: f64,
    pub map_dim: Option<usize>,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            docs: 500,
            len: 64,
            dim: 8,
            sigma_sq: 1.0,
            endpoint_scale: 1.0,
            map_dim: None,
            seed: 0,
            output: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: InputArgs,
    /// Common length every document is resampled to.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Also write `pos,dim,mean,var` CSV here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySettings {
    pub input: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub length: usize,
    pub csv: Option<PathBuf>,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        Self {
            input: None,
            encoder: None,
            output: None,
            length: 32,
            csv: None,
        }
    }
}

/// Parsed config file: top-level keys plus one table per command.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))? {
            Value::Object(root) => Ok(Self {
                root: normalize_keys(root),
            }),
            _ => Err(CliError::Config("config root must be a table".into())),
        }
    }

    /// Top-level scalars overlaid with the command's own table.
    fn section(&self, command: &str) -> Map<String, Value> {
        let mut merged: Map<String, Value> = self
            .root
            .iter()
            .filter(|(_, v)| !v.is_object())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(Value::Object(own)) = self.root.get(&command.replace('-', "_")) {
            merged.extend(own.clone());
        }
        merged
    }
}

fn normalize_keys(map: Map<String, Value>) -> Map<String, Value> {
    map.into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::Object(inner) => Value::Object(normalize_keys(inner)),
                other => other,
            };
            (k.replace('-', "_"), v)
        })
        .collect()
}

/// Merges config values under flags and fills the remaining defaults.
pub fn resolve<S, F>(config: &ConfigFile, command: &str, flags: &F) -> Result<S, CliError>
where
    S: DeserializeOwned + Serialize + Default,
    F: Serialize,
{
    let mut merged = config.section(command);
    // keys other commands or the runtime consume
    let known: Map<String, Value> = match serde_json::to_value(S::default()) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    match serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? {
        Value::Object(f) => merged.extend(f),
        _ => unreachable!("flag structs serialize to maps"),
    }
    merged.retain(|k, _| {
        let keep = known.contains_key(k);
        if !keep && !matches!(k.as_str(), "threads" | "format") {
            log::debug!("config key {k:?} is not used by {command}");
        }
        keep
    });
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("{command}: {e}")))
}

pub fn resolve_global(config: &ConfigFile, cli: &Cli) -> Result<GlobalSettings, CliError> {
    let mut settings: GlobalSettings = resolve(config, "runtime", &Map::new())?;
    if cli.threads.is_some() {
        settings.threads = cli.threads;
    }
    if cli.format.is_some() {
        settings.format = cli.format;
    }
    Ok(settings)
}

pub fn required<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required setting `{name}`")))
}

impl TrainEncoderSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        required(&self.input, "input")?;
        required(&self.output, "output")?;
        Ok(())
    }
}

impl ShuffleSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        required(&self.input, "input")?;
        self.task.validate()
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        required(&self.input, "input")?;
        if self.grid.is_empty() {
            return Err(CliError::Usage("--grid needs at least one value".into()));
        }
        if let Some(bad) = self.grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(CliError::Usage(format!(
                "grid value {bad} is not a positive number"
            )));
        }
        self.task.validate()
    }
}

impl ClassifySettings {
    pub fn validate(&self) -> Result<(), CliError> {
        required(&self.input, "input")?;
        if !(0.0..1.0).contains(&self.train_fraction) {
            return Err(CliError::Usage(
                "--train-fraction must lie in [0, 1)".into(),
            ));
        }
        self.task.validate()
    }
}

impl SimulateSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        required(&self.output, "output")?;
        if self.docs == 0 || self.len < 2 || self.dim == 0 || self.map_dim == Some(0) {
            return Err(CliError::Usage(
                "--docs and --dim must be positive and --T at least 2".into(),
            ));
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(CliError::Usage(format!(
                "--sigma-sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        Ok(())
    }
}

impl DetectSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.train.len() < 2 {
            return Err(CliError::Usage(
                "detect-llm needs at least two --train corpora".into(),
            ));
        }
        if self.test.is_empty() {
            return Err(CliError::Usage(
                "detect-llm needs at least one --test corpus".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(CliError::Usage("--top-k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits `label=path`.
pub fn labelled_path(spec: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(CliError::Usage(format!(
            "expected label=path, got {spec:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ConfigFile {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        ConfigFile::load(&path).unwrap()
    }

    #[test]
    fn flags_beat_sections_beat_top_level() {
        let cfg =
            config("seed = 1\nb = 9\n[shuffle_eval]\nseed = 2\nn-shuffles = 3\nkind = \"local\"\n");
        let flags = ShuffleArgs {
            task: ShuffleTaskArgs {
                seed: Some(5),
                ..Default::default()
            },
            ..Default::default()
        };
        let s: ShuffleSettings = resolve(&cfg, "shuffle-eval", &flags).unwrap();
        assert_eq!(s.task.seed, 5);
        assert_eq!(s.task.n_shuffles, 3);
        assert_eq!(s.task.b, 9);
        assert_eq!(s.task.kind, ShuffleKind::LocalWindow);
        let s: ShuffleSettings = resolve(&cfg, "shuffle-eval", &ShuffleArgs::default()).unwrap();
        assert_eq!(s.task.seed, 2);
    }

    #[test]
    fn defaults_fill_the_rest() {
        let s: SweepSettings =
            resolve(&ConfigFile::default(), "sigma-sweep", &SweepArgs::default()).unwrap();
        assert_eq!(s, SweepSettings::default());
        assert_eq!(s.grid.len(), 9);
        assert!((s.grid[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = config("[simulate]\ndocs = \"many\"\n");
        let err =
            resolve::<SimulateSettings, _>(&cfg, "simulate", &SimulateArgs::default()).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn labelled_paths() {
        assert_eq!(
            labelled_path("a=b/c.bbx").unwrap(),
            ("a".into(), PathBuf::from("b/c.bbx"))
        );
        assert!(labelled_path("nolabel").is_err());
        assert!(labelled_path("=x").is_err());
    }
}
