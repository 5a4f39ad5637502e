//! Command-line driver for the k-GANs experiments.
//!
//! Four subcommands cover the whole workflow: `dataset` writes toy CSVs,
//! `train` produces a self-describing run directory, `eval` scores a run and
//! draws its figure, and `ot` exposes the semi-discrete transport solver
//! directly. Exit codes: 0 success, 1 runtime failure, 2 validation failure.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgans_core::transport::{DEFAULT_DUAL_MAX_ITERS, DEFAULT_DUAL_STEP, DEFAULT_DUAL_TOL};

pub use commands::{cmd_dataset, cmd_eval, cmd_ot, cmd_train, out_root};
use config::{DataSource, RunConfig, RunMode};
use kgans_core::ensemble::InitStrategy;
use kgans_core::PenaltyForm;

/// What went wrong, split by whose fault it is.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The request itself is malformed; exits with code 2.
    #[error("{0}")]
    Validation(String),
    /// The request was fine but the work failed; exits with code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    /// Adapter for `io::Error` with the path and verb attached.
    pub(crate) fn io<'a>(
        verb: &'static str,
        path: &'a std::path::Path,
    ) -> impl FnOnce(std::io::Error) -> Self + 'a {
        move |e| Self::Runtime(format!("{verb} {}: {e}", path.display()))
    }
}

impl From<kgans_core::Error> for CliError {
    fn from(e: kgans_core::Error) -> Self {
        match &e {
            kgans_core::Error::InvalidArgument(_)
            | kgans_core::Error::ShapeMismatch(_)
            | kgans_core::Error::Parse { .. } => Self::Validation(e.to_string()),
            kgans_core::Error::NonFinite(_) | kgans_core::Error::Io(_) => {
                Self::Runtime(e.to_string())
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "kgans", version, about = "Ensembles of small GANs over a prototype tessellation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a toy dataset CSV.
    Dataset(DatasetArgs),
    /// Train a model into a run directory (checkpointed, resumable).
    Train(Box<TrainArgs>),
    /// Score a finished run: coverage/precision metrics plus an SVG figure.
    Eval(EvalArgs),
    /// Solve one semi-discrete optimal transport problem from a CSV.
    Ot(OtArgs),
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Toy preset: td1 (two disks), td2 (three disks), td3 (four corners).
    #[arg(long, conflicts_with = "centers")]
    pub preset: Option<String>,
    /// Custom disk centers "x,y;x,y;..." with every coordinate in [-1, 1].
    #[arg(long)]
    pub centers: Option<String>,
    /// Disk radius for --centers.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Points to draw.
    #[arg(long, default_value_t = kgans_core::data::DEFAULT_TOY_N)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Run directory; defaults to $KGANS_OUT_ROOT (or ./runs) plus an
    /// auto-generated name.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; may be partial. Flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// kgans (the ensemble) or kgenerators (the nonparametric reduction).
    #[arg(long)]
    pub mode: Option<String>,
    /// Toy preset to train on: td1, td2, or td3.
    #[arg(long, conflicts_with = "data")]
    pub preset: Option<String>,
    /// Train on an existing CSV instead of a preset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Points drawn for a preset dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of cells (prototype + generator pairs); 1 is the baseline.
    #[arg(long)]
    pub k: Option<usize>,
    /// Master seed for every random draw in the run.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iters_per_epoch: Option<usize>,
    /// Points per training batch (shared by the GAN internals).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Prototype learning rate; 0 freezes the prototypes.
    #[arg(long)]
    pub alpha_proto: Option<f64>,
    /// Executed iterations before a cell's prototype starts moving.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Prototype initialization: kmeans or uniform-random.
    #[arg(long)]
    pub init: Option<String>,
    /// Consecutive empty batches before a starved prototype reseeds.
    #[arg(long)]
    pub empty_cell_patience: Option<usize>,
    /// Train the cells on threads, prototypes frozen within each epoch.
    #[arg(long)]
    pub parallel_epochs: bool,
    /// Exponent of the ground cost |x - y|^p.
    #[arg(long)]
    pub cost_p: Option<f64>,
    /// Update-then-reassign rounds (kgenerators mode).
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Prototype update rule for kgenerators mode: medoid or mean.
    #[arg(long)]
    pub update_rule: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub alpha_gen: Option<f64>,
    #[arg(long)]
    pub alpha_critic: Option<f64>,
    /// Critic updates per generator update.
    #[arg(long)]
    pub critic_steps: Option<usize>,
    /// Lipschitz penalty coefficient.
    #[arg(long)]
    pub gamma_reg: Option<f64>,
    /// Penalty form: ratio or literal.
    #[arg(long)]
    pub penalty_form: Option<String>,
    /// Default sample count recorded for later `eval` calls.
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Default coverage grid resolution recorded for later `eval` calls.
    #[arg(long)]
    pub grid_bins: Option<usize>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Continue a checkpointed run in --out; only --epochs may change.
    #[arg(long)]
    pub resume: bool,
}

impl TrainArgs {
    /// Overlays the flags that were actually given onto `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(mode) = &self.mode {
            cfg.mode = RunMode::parse(mode)?;
        }
        if let Some(path) = &self.data {
            cfg.data = DataSource::File { path: path.to_string_lossy().into_owned() };
        }
        if let Some(name) = &self.preset {
            let n = match cfg.data {
                DataSource::Preset { n, .. } => n,
                DataSource::File { .. } => kgans_core::data::DEFAULT_TOY_N,
            };
            cfg.data = DataSource::Preset { name: name.clone(), n };
        }
        if let Some(n) = self.n {
            match &mut cfg.data {
                DataSource::Preset { n: slot, .. } => *slot = n,
                DataSource::File { .. } => {
                    return Err(CliError::Validation(
                        "--n only applies to preset data; the CSV fixes the size".into(),
                    ))
                }
            }
        }
        if let Some(k) = self.k {
            cfg.train.k = k;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(iters) = self.iters_per_epoch {
            cfg.train.iters_per_epoch = iters;
        }
        if let Some(batch) = self.batch_size {
            cfg.train.batch_size = batch;
            cfg.gan.batch_size = batch;
        }
        if let Some(alpha) = self.alpha_proto {
            cfg.train.alpha_proto = alpha;
        }
        if let Some(burn_in) = self.burn_in {
            cfg.train.burn_in = burn_in;
        }
        if let Some(init) = &self.init {
            cfg.train.init = match init.as_str() {
                "kmeans" => InitStrategy::KMeans,
                "uniform-random" => InitStrategy::UniformRandom,
                other => {
                    return Err(CliError::Validation(format!(
                        "init must be kmeans or uniform-random, got {other:?}"
                    )))
                }
            };
        }
        if let Some(patience) = self.empty_cell_patience {
            cfg.train.empty_cell_patience = patience;
        }
        if self.parallel_epochs {
            cfg.train.parallel_epochs = true;
        }
        if let Some(p) = self.cost_p {
            cfg.cost_p = p;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
        if let Some(rule) = &self.update_rule {
            cfg.update_rule = match rule.as_str() {
                "medoid" => kgans_core::UpdateRule::Medoid,
                "mean" => kgans_core::UpdateRule::Mean,
                other => {
                    return Err(CliError::Validation(format!(
                        "update-rule must be medoid or mean, got {other:?}"
                    )))
                }
            };
        }
        if let Some(latent) = self.latent_dim {
            cfg.gan.latent_dim = latent;
        }
        if let Some(alpha) = self.alpha_gen {
            cfg.gan.alpha_gen = alpha;
        }
        if let Some(alpha) = self.alpha_critic {
            cfg.gan.alpha_critic = alpha;
        }
        if let Some(steps) = self.critic_steps {
            cfg.gan.critic_steps = steps;
        }
        if let Some(gamma) = self.gamma_reg {
            cfg.gan.gamma_reg = gamma;
        }
        if let Some(form) = &self.penalty_form {
            cfg.gan.penalty_form = match form.as_str() {
                "ratio" => PenaltyForm::Ratio,
                "literal" => PenaltyForm::Literal,
                other => {
                    return Err(CliError::Validation(format!(
                        "penalty-form must be ratio or literal, got {other:?}"
                    )))
                }
            };
        }
        if let Some(samples) = self.eval_samples {
            cfg.eval.samples = samples;
        }
        if let Some(bins) = self.grid_bins {
            cfg.eval.bins = bins;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Generated points to draw (default: the run config's value).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Coverage grid resolution per axis (default: the run config's value).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Sampling seed (default: the run's master seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mask centers "x,y;..." — required for runs trained on a CSV.
    #[arg(long)]
    pub masks: Option<String>,
    /// Mask radius used with --masks.
    #[arg(long)]
    pub mask_radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct OtArgs {
    /// CSV of source points (uniform empirical measure).
    #[arg(long)]
    pub data: PathBuf,
    /// Target atoms "x,y;x,y;...".
    #[arg(long)]
    pub atoms: String,
    /// Atom weights (default: uniform).
    #[arg(long)]
    pub weights: Option<String>,
    /// Ground cost exponent.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Ascent step size.
    #[arg(long, default_value_t = DEFAULT_DUAL_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = DEFAULT_DUAL_MAX_ITERS)]
    pub max_iters: usize,
    /// Stop once the mass residual falls below this.
    #[arg(long, default_value_t = DEFAULT_DUAL_TOL)]
    pub tol: f64,
    /// Also solve the instance exactly (small inputs) and report the gap.
    #[arg(long)]
    pub exact: bool,
}

/// Parses argv and runs the requested subcommand, translating errors into
/// exit codes.
pub fn main_impl() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Dataset(args) => cmd_dataset(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ot(args) => cmd_ot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
