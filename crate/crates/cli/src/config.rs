//! The merged run configuration and its file/flag layering.
//!
//! A run is fully described by one [`RunConfig`]. `train` assembles it from
//! three layers — built-in defaults, then an optional JSON config file, then
//! command-line flags — validates it, and writes the result verbatim into the
//! run directory as `config.json`. `eval` later reads that file back, so a run
//! directory is self-describing.

use std::fs;
use std::path::Path;

use kgans_core::data::DEFAULT_TOY_N;
use kgans_core::eval::DEFAULT_GRID_BINS;
use kgans_core::{GanConfig, TrainConfig, UpdateRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Generated points drawn when `eval` is not given `--samples`.
///
/// Coverage only discriminates while the grid is unsaturated: with ~10x more
/// in-mask samples than in-mask bins even a diffuse, low-precision sampler
/// touches nearly every bin. 1000 samples on the default 50-bin grid keeps
/// the metric sensitive to where the typical mass lands.
pub const DEFAULT_EVAL_SAMPLES: usize = 1_000;

/// Which training pipeline a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// The full ensemble: one small GAN per cell, prototypes moved by
    /// transport gradients.
    Kgans,
    /// The nonparametric reduction: prototypes only, each cell sampled
    /// uniformly from its member points.
    Kgenerators,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "kgans" => Ok(Self::Kgans),
            "kgenerators" => Ok(Self::Kgenerators),
            other => Err(CliError::Validation(format!(
                "mode must be kgans or kgenerators, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Kgans => "kgans",
            Self::Kgenerators => "kgenerators",
        }
    }
}

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A named toy preset, generated with the run's master seed.
    Preset { name: String, n: usize },
    /// An existing CSV; copied into the run directory at train time.
    File { path: String },
}

impl DataSource {
    /// Short tag used in auto-generated run directory names.
    pub fn label(&self) -> String {
        match self {
            Self::Preset { name, .. } => name.clone(),
            Self::File { path } => Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
        }
    }
}

/// Evaluation defaults recorded with the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Generated points drawn for the metrics.
    pub samples: usize,
    /// Grid resolution per axis for the coverage bins.
    pub bins: usize,
}

/// Everything a run needs, in one serializable place.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub data: DataSource,
    /// Exponent of the ground cost `|x - y|^p`.
    pub cost_p: f64,
    /// Update-then-reassign rounds in `kgenerators` mode.
    pub rounds: usize,
    /// Prototype update rule in `kgenerators` mode.
    pub update_rule: UpdateRule,
    pub gan: GanConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Kgans,
            data: DataSource::Preset { name: "td2".into(), n: DEFAULT_TOY_N },
            cost_p: 2.0,
            rounds: 50,
            update_rule: UpdateRule::Medoid,
            gan: GanConfig::default(),
            train: TrainConfig::new(3, 0),
            eval: EvalConfig { samples: DEFAULT_EVAL_SAMPLES, bins: DEFAULT_GRID_BINS },
        }
    }
}

impl RunConfig {
    /// Checks everything the core constructors would reject, plus the
    /// CLI-level fields the core never sees.
    pub fn validate(&self) -> Result<(), CliError> {
        match &self.data {
            DataSource::Preset { name, n } => {
                if !matches!(name.as_str(), "td1" | "td2" | "td3") {
                    return Err(CliError::Validation(format!(
                        "preset must be td1, td2, or td3, got {name:?}"
                    )));
                }
                if *n == 0 {
                    return Err(CliError::Validation("n must be at least 1".into()));
                }
            }
            DataSource::File { path } => {
                if path.is_empty() {
                    return Err(CliError::Validation("data file path must be non-empty".into()));
                }
            }
        }
        if !self.cost_p.is_finite() || self.cost_p < 1.0 {
            return Err(CliError::Validation(format!(
                "cost_p must be at least 1, got {}",
                self.cost_p
            )));
        }
        if self.mode == RunMode::Kgenerators && self.rounds == 0 {
            return Err(CliError::Validation("rounds must be at least 1".into()));
        }
        if self.eval.samples == 0 {
            return Err(CliError::Validation("eval samples must be at least 1".into()));
        }
        if self.eval.bins == 0 {
            return Err(CliError::Validation("eval bins must be at least 1".into()));
        }
        self.gan.validate()?;
        self.train.validate().map_err(CliError::from)
    }

    /// Serialized form written to `config.json` (pretty, trailing newline).
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("could not serialize config: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("bad config JSON: {e}")))
    }
}

/// Overlays `patch` onto `base`, object fields merging recursively and
/// everything else replacing. Lets a config file state only the fields it
/// cares about.
fn merge_value(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (key, value) in p {
                match b.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Defaults overlaid with a (possibly partial) JSON config file.
pub fn load_config_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Validation(format!("could not read config {}: {e}", path.display()))
    })?;
    let patch: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad config JSON in {}: {e}", path.display())))?;
    let mut base = serde_json::to_value(RunConfig::default())
        .map_err(|e| CliError::Runtime(format!("could not serialize defaults: {e}")))?;
    merge_value(&mut base, patch);
    serde_json::from_value(base)
        .map_err(|e| CliError::Validation(format!("bad config in {}: {e}", path.display())))
}

/// True when two configs agree on every field except `train.epochs` — the one
/// thing a resumed run may change.
pub fn same_except_epochs(a: &RunConfig, b: &RunConfig) -> Result<bool, CliError> {
    let strip = |c: &RunConfig| -> Result<serde_json::Value, CliError> {
        let mut v = serde_json::to_value(c)
            .map_err(|e| CliError::Runtime(format!("could not serialize config: {e}")))?;
        if let Some(train) = v.get_mut("train").and_then(|t| t.as_object_mut()) {
            train.remove("epochs");
        }
        Ok(v)
    };
    Ok(strip(a)? == strip(b)?)
}
