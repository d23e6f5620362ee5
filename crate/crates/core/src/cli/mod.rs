//! Command-line front end: `search`, `eval` and `analyze`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
//! 3 evaluator failure.

mod analyze;
mod config;
mod eval;
mod manifest;
mod search;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use thiserror::Error;

use crate::curve::SamplingMode;
use crate::evolution::{GaConfig, UtilizationWeights};
use crate::toy::ToyModelConfig;

pub use config::{parse_evaluator_tokens, EvaluatorSection, EvaluatorSpec, PlantedSection, RunConfig};
pub use eval::EvalReport;
pub use manifest::{Artifact, RunManifest, Seeds};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Evaluator(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Evaluator(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "layerscale", version, about = "Layer-wise RoPE scaling search and analysis")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the genetic search and write results to an output directory.
    Search(Box<SearchArgs>),
    /// Score one schedule and print its accuracies and utilization.
    Eval(EvalArgs),
    /// Decay curves, entropy profiles, schedules and probe experiments.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

/// Overrides for every search hyperparameter.
#[derive(Debug, Clone, Default, Args)]
pub struct GaFlags {
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub mutation_size: Option<usize>,
    #[arg(long)]
    pub crossover_size: Option<usize>,
    /// Number of generations after the initial one.
    #[arg(long, visible_alias = "max-iterations")]
    pub generations: Option<usize>,
    #[arg(long)]
    pub mutate_probability: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub amplitude_x: Option<usize>,
    #[arg(long)]
    pub amplitude_y: Option<f64>,
    /// Utilization weights `first,middle,last`.
    #[arg(long)]
    pub weights: Option<UtilizationWeights>,
    /// Root random seed of the search.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub first_scaled_layer: Option<usize>,
    #[arg(long)]
    pub control_points: Option<usize>,
    /// `uniform_t` or `x_resolved`.
    #[arg(long)]
    pub sampling_mode: Option<SamplingMode>,
    #[arg(long)]
    pub y_min: Option<f64>,
    #[arg(long)]
    pub y_max: Option<f64>,
    #[arg(long)]
    pub y_step: Option<f64>,
    #[arg(long)]
    pub eval_retries: Option<u32>,
}

macro_rules! apply {
    ($src:expr, $dst:expr; $($field:ident => $target:ident),* $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$target = v; })*
    };
}

impl GaFlags {
    pub fn apply(&self, cfg: &mut GaConfig) {
        apply!(self, cfg;
            population_size => population_size,
            mutation_size => mutation_size,
            crossover_size => crossover_size,
            generations => max_iterations,
            mutate_probability => mutate_probability,
            top_k => top_k,
            amplitude_x => amplitude_x,
            amplitude_y => amplitude_y,
            weights => weights,
            seed => rng_seed,
            n_layers => n_layers,
            first_scaled_layer => first_scaled_layer,
            control_points => control_points,
            sampling_mode => sampling_mode,
            y_min => y_min,
            y_max => y_max,
            y_step => y_step,
            eval_retries => eval_retries,
        );
    }
}

/// Evaluator backend options shared by `search` and `eval`.
#[derive(Debug, Clone, Default, Args)]
pub struct EvaluatorFlags {
    /// planted | toy | constant:a,b,c | external:<host:port> | external-cmd <argv>
    #[arg(long, num_args = 1..=2, value_names = ["SPEC", "ARGV"])]
    pub evaluator: Option<Vec<String>>,
    /// Per-request timeout for external evaluators, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Client-side retries per external request.
    #[arg(long)]
    pub retries: Option<u32>,
    /// Toy oracle trials per position.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Toy oracle instance seed.
    #[arg(long)]
    pub instance_seed: Option<u64>,
    /// Toy model weight seed.
    #[arg(long)]
    pub weight_seed: Option<u64>,
    /// Planted oracle sharpness.
    #[arg(long)]
    pub sharpness: Option<f64>,
}

impl EvaluatorFlags {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(tokens) = &self.evaluator {
            cfg.evaluator.spec = parse_evaluator_tokens(tokens)
                .map_err(CliError::Config)?
                .to_string();
        }
        apply!(self, cfg.evaluator;
            timeout => timeout_secs,
            retries => retries,
            trials => trials,
            instance_seed => instance_seed,
        );
        apply!(self, cfg.toy; weight_seed => weight_seed);
        apply!(self, cfg.planted; sharpness => sharpness);
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// TOML file with [ga], [toy], [rope], [planted] and [evaluator] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub evaluator: EvaluatorFlags,
    #[command(flatten)]
    pub ga: GaFlags,
    #[arg(long, default_value = "layerscale-out")]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint file; configuration comes from the checkpoint.
    #[arg(long, conflicts_with_all = ["config", "replay"])]
    pub resume: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    pub replay: Option<PathBuf>,
    /// Evaluation threads; defaults to the number of logical cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// JSON schedule `{"scales": [...], "first_scaled_layer": F}` or a bare array.
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub evaluator: EvaluatorFlags,
    /// Utilization weights `first,middle,last`.
    #[arg(long)]
    pub weights: Option<UtilizationWeights>,
    /// Print machine-readable JSON.
    #[arg(long)]
    pub json: bool,
}

/// Toy model overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ToyFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "layers")]
    pub n_layers: Option<usize>,
    #[arg(long = "heads")]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Sequence length.
    #[arg(long = "seq")]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long)]
    pub weight_seed: Option<u64>,
    /// Seed of the random input tokens.
    #[arg(long, default_value_t = 0)]
    pub token_seed: u64,
}

impl ToyFlags {
    pub fn resolve(&self) -> Result<ToyModelConfig, CliError> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?.toy;
        apply!(self, cfg;
            n_layers => n_layers,
            n_heads => n_heads,
            head_dim => head_dim,
            seq_len => seq_len,
            base => base,
            weight_seed => weight_seed,
        );
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum AnalyzeCommand {
    /// Attention score vs distance for each scale (CSV).
    Decay {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Head dimension.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        base: Option<f64>,
        /// Comma-separated scales.
        #[arg(long, default_value = "1.0,1.5")]
        scales: String,
        #[arg(long, default_value_t = 4096)]
        max_dist: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer mean attention entropy of the toy model (CSV).
    Entropy {
        /// Uniform scale applied to every layer.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        toy: ToyFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear up-then-down extrapolation schedule (JSON).
    Schedule {
        /// Pretrained context window.
        #[arg(long = "L")]
        pretrained: f64,
        /// Target context window.
        #[arg(long = "Lp")]
        target: f64,
        #[arg(long, default_value_t = 0.3)]
        interval: f64,
        #[arg(long, default_value_t = 32)]
        layers: usize,
        /// Peak layer; defaults to layers / 2.
        #[arg(long)]
        peak: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-block similarity with rotary ablated on some layers (CSV).
    ProbeFirstBlock {
        #[command(flatten)]
        toy: ToyFlags,
        /// Layer whose output states are probed.
        #[arg(long, default_value_t = 4)]
        layer: usize,
        /// Inclusive range of layers without rotary, `a-b`.
        #[arg(long, default_value = "2-4")]
        ablate: String,
        #[arg(long, default_value_t = 128)]
        block: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Middle-vs-last similarity across a scale sweep (CSV).
    ProbeMiddleLast {
        #[command(flatten)]
        toy: ToyFlags,
        #[arg(long, default_value = "1.0,1.25,1.5,1.75,2.0")]
        scales: String,
        /// Layer whose output states are probed; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
        /// Token samples averaged per scale.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number `{p}`: {e}")))
        })
        .collect()
}

pub(crate) fn write_output(
    path: Option<&std::path::Path>,
    stdout: &mut dyn Write,
    bytes: &[u8],
) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => Ok(stdout.write_all(bytes)?),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Search(args) => search::cmd_search(&args, stdout),
        Command::Eval(args) => eval::cmd_eval(&args, stdout).map(|_| 0),
        Command::Analyze(cmd) => analyze::cmd_analyze(&cmd, stdout).map(|_| 0),
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    let verbosity = args
        .iter()
        .filter_map(|a| a.to_str())
        .map(|a| match a {
            "--verbose" => 1,
            s if s.starts_with('-') && !s.starts_with("--") && s[1..].chars().all(|c| c == 'v') => {
                s.len() - 1
            }
            _ => 0,
        })
        .sum::<usize>();
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(args, &mut lock)
}
