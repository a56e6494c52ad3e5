use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use stiffnet::batchmeans::BatchConfig;
use stiffnet::likelihood::{Method, ScaleConvention};
use stiffnet::models;
use stiffnet::network::ReactionNetwork;

use crate::CliError;

pub const SEED_ENV: &str = "STIFFNET_SEED";

#[derive(Parser, Debug)]
#[command(name = "stiffnet", version, about = "Stiff stochastic reaction networks: simulation, two-time-scale averaging and sensitivities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Single-scale SSA ensemble with likelihood-ratio sensitivities.
    Simulate,
    /// Two-time-scale ensemble with macro sensitivities per checkpoint.
    Tts,
    /// Single-scale versus two-time-scale errors over an epsilon sweep.
    Compare,
    /// Exact stationary, sensitivity, spectral and ODE references.
    Oracle,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Simulate => "simulate",
            Command::Tts => "tts",
            Command::Compare => "compare",
            Command::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorArg {
    Lr,
    Clr,
    Elr,
    Celr,
}

impl From<EstimatorArg> for Method {
    fn from(e: EstimatorArg) -> Method {
        match e {
            EstimatorArg::Lr => Method::Lr,
            EstimatorArg::Clr => Method::Clr,
            EstimatorArg::Elr => Method::Elr,
            EstimatorArg::Celr => Method::Celr,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleArg {
    RescaledAlpha,
    OriginalAlphaEps,
}

impl From<ScaleArg> for ScaleConvention {
    fn from(s: ScaleArg) -> ScaleConvention {
        match s {
            ScaleArg::RescaledAlpha => ScaleConvention::RescaledAlpha,
            ScaleArg::OriginalAlphaEps => ScaleConvention::OriginalAlphaEps,
        }
    }
}

/// Command-line flags; each overrides the matching key of `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct Opts {
    /// Network JSON file, or one of the bundled names: isomerization, adsorption, two-state.
    #[arg(long, global = true)]
    pub net: Option<String>,
    #[arg(long, global = true)]
    pub t_final: Option<f64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Base seed; overrides STIFFNET_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated epsilon values for `compare`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub epsilon_sweep: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Number of batches for micro-equilibration.
    #[arg(long, global = true)]
    pub batches: Option<usize>,
    /// Margin-of-error tolerance for micro-equilibration.
    #[arg(long, global = true)]
    pub moe_tol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub scale_convention: Option<ScaleArg>,
    /// Comma-separated initial copy numbers (required for network files).
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<i64>>,
    /// Comma-separated observation times before the horizon.
    #[arg(long, global = true, value_delimiter = ',')]
    pub checkpoints: Option<Vec<f64>>,
    /// Overrides the epsilon stored in the network file.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Species whose expectation the oracle differentiates.
    #[arg(long, global = true)]
    pub observable: Option<String>,
}

/// Keys accepted in a `--config` file. Unknown keys are rejected.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub command: Option<Command>,
    pub net: Option<String>,
    pub t_final: Option<f64>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub estimator: Option<Method>,
    pub batch: Option<BatchConfig>,
    pub out: Option<PathBuf>,
    pub epsilon_sweep: Option<Vec<f64>>,
    pub scale_convention: Option<ScaleConvention>,
    pub x0: Option<Vec<i64>>,
    pub checkpoints: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub observable: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub net_source: String,
    pub net: ReactionNetwork,
    pub x0: Vec<i64>,
    pub t_final: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub estimator: Method,
    pub batch: BatchConfig,
    pub out: PathBuf,
    pub epsilon_sweep: Vec<f64>,
    pub scale_convention: ScaleConvention,
    pub checkpoints: Vec<f64>,
    pub observable: Option<String>,
}

fn builtin(name: &str) -> Option<(ReactionNetwork, Vec<i64>)> {
    match name {
        "isomerization" => Some((
            ReactionNetwork::from_json(models::ISOMERIZATION_JSON).ok()?,
            models::ISOMERIZATION_X0.to_vec(),
        )),
        "adsorption" => Some((models::adsorption(), models::ADSORPTION_X0.to_vec())),
        "two-state" => Some((models::two_state_chain(1.0, 1.5, 1.0), vec![1, 0])),
        _ => None,
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn default_estimator(cmd: Command) -> Method {
    match cmd {
        Command::Tts => Method::Celr,
        _ => Method::Clr,
    }
}

impl RunConfig {
    /// Merges flags over the config file over defaults and validates.
    /// `env_seed` is the value of STIFFNET_SEED, if set.
    pub fn resolve(command: Command, opts: &Opts, env_seed: Option<&str>) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if let Some(c) = file.command {
            if c != command {
                return Err(CliError::Config(format!("config is for '{c}' but '{command}' was requested")));
            }
        }
        let net_source = opts
            .net
            .clone()
            .or(file.net.clone())
            .ok_or_else(|| CliError::Config("no network given; use --net FILE or a bundled name".into()))?;
        let (mut net, default_x0) = match builtin(&net_source) {
            Some((n, x)) => (n, Some(x)),
            None => {
                let n = ReactionNetwork::from_file(&net_source)
                    .map_err(|e| CliError::Config(format!("network {net_source}: {e}")))?;
                (n, None)
            }
        };
        if let Some(eps) = opts.epsilon.or(file.epsilon) {
            net = net.with_epsilon(eps).map_err(|e| CliError::Config(e.to_string()))?;
        }
        let x0 = opts
            .x0
            .clone()
            .or(file.x0.clone())
            .or(default_x0)
            .ok_or_else(|| CliError::Config("initial state required: pass --x0 a,b,c".into()))?;
        if x0.len() != net.n_species() {
            return Err(CliError::Config(format!("x0 has {} entries for {} species", x0.len(), net.n_species())));
        }
        if x0.iter().any(|&v| v < 0) {
            return Err(CliError::Config("x0 entries must be nonnegative".into()));
        }
        let t_final = opts.t_final.or(file.t_final).map(|t| positive("t_final", t)).transpose()?;
        if t_final.is_none() && command != Command::Oracle {
            return Err(CliError::Config(format!("'{command}' needs --t-final")));
        }
        let replicates = opts.replicates.or(file.replicates).unwrap_or(1000);
        if replicates == 0 {
            return Err(CliError::Config("replicates must be positive".into()));
        }
        let seed = match opts.seed.or(file.seed) {
            Some(s) => s,
            None => match env_seed {
                Some(s) => s.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}='{s}' is not an integer")))?,
                None => 0,
            },
        };
        let estimator = opts.estimator.map(Method::from).or(file.estimator).unwrap_or(default_estimator(command));
        let mut batch = file.batch.clone().unwrap_or_default();
        if let Some(b) = opts.batches {
            batch.n_batches = b;
        }
        if let Some(tol) = opts.moe_tol {
            batch.delta_precise = positive("moe_tol", tol)?;
        }
        batch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let epsilon_sweep = opts.epsilon_sweep.clone().or(file.epsilon_sweep.clone()).unwrap_or_default();
        for &e in &epsilon_sweep {
            if !(e > 0.0 && e <= 1.0) {
                return Err(CliError::Config(format!("epsilon {e} not in (0, 1]")));
            }
        }
        if command == Command::Compare && epsilon_sweep.is_empty() {
            return Err(CliError::Config("'compare' needs --epsilon-sweep".into()));
        }
        let checkpoints = opts.checkpoints.clone().or(file.checkpoints.clone()).unwrap_or_default();
        for &c in &checkpoints {
            positive("checkpoint", c)?;
        }
        let scale_convention = opts
            .scale_convention
            .map(ScaleConvention::from)
            .or(file.scale_convention)
            .unwrap_or(ScaleConvention::RescaledAlpha);
        let observable = opts.observable.clone().or(file.observable.clone());
        if let Some(name) = &observable {
            if net.species_index(name).is_none() {
                return Err(CliError::Config(format!("unknown species '{name}'")));
            }
        }
        Ok(RunConfig {
            command,
            net_source,
            net,
            x0,
            t_final,
            replicates,
            seed,
            estimator,
            batch,
            out: opts.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("stiffnet-out")),
            epsilon_sweep,
            scale_convention,
            checkpoints,
            observable,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final.expect("validated for this command")
    }
}
