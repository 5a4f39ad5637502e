//! The four subcommand implementations.
//!
//! Run directory layout (everything `train` and `eval` produce):
//!
//! ```text
//! <dir>/config.json             merged run configuration, written verbatim
//! <dir>/data.csv                the training data (generated or copied)
//! <dir>/history.csv             per-iteration training log (kgans mode)
//!                               or per-round objectives (kgenerators mode)
//! <dir>/checkpoints/epoch-NNNN.json   trainer snapshot after each epoch
//! <dir>/ensemble.json           final model (kgans mode)
//! <dir>/kgenerators.json        final model (kgenerators mode)
//! <dir>/metrics.json            written by `eval`
//! <dir>/figure.svg              written by `eval`
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kgans_core::data::{load_csv, make_toy, save_csv, ToySpec, TOY_RADIUS};
use kgans_core::ensemble::{
    history_csv_header, history_row_csv, run_kgenerators_with_rule, EnsembleState, KGenerators,
    Trainer, TrainerState,
};
use kgans_core::eval::{coverage, export_figure, precision};
use kgans_core::transport::{cell_masses, ot_exact_small, solve_dual};
use kgans_core::{
    CostFunction, Dataset, DiscreteMeasure, EmpiricalMeasure, Ensemble, GridSpec, MaskSet,
    Tessellation,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{
    load_config_file, same_except_epochs, DataSource, RunConfig, RunMode,
};
use crate::{CliError, DatasetArgs, EvalArgs, OtArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.json";
pub const DATA_FILE: &str = "data.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const KGENERATORS_FILE: &str = "kgenerators.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const FIGURE_FILE: &str = "figure.svg";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Most points of one class drawn into the figure; metrics always use the
/// full sample.
const FIGURE_POINT_CAP: usize = 2_000;

/// `$KGANS_OUT_ROOT`, falling back to `./runs`, for runs without `--out`.
pub fn out_root() -> PathBuf {
    std::env::var_os("KGANS_OUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_f64(field: &str, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Validation(format!("{field}: not a number: {s:?}")))
}

/// Parses `"x,y;x,y;..."` into points.
pub fn parse_points(field: &str, s: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let mut points = Vec::new();
    for chunk in s.split(';') {
        let point: Vec<f64> = chunk
            .split(',')
            .map(|v| parse_f64(field, v))
            .collect::<Result<_, _>>()?;
        if point.is_empty() {
            return Err(CliError::Validation(format!("{field}: empty point in {s:?}")));
        }
        points.push(point);
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(CliError::Validation(format!("{field}: points differ in dimension")));
    }
    Ok(points)
}

fn parse_weights(s: &str) -> Result<Vec<f64>, CliError> {
    s.split([',', ';']).map(|v| parse_f64("weights", v)).collect()
}

fn toy_spec(name: &str, n: usize, seed: u64) -> Result<ToySpec, CliError> {
    match name {
        "td1" => Ok(ToySpec::td1(n, seed)?),
        "td2" => Ok(ToySpec::td2(n, seed)?),
        "td3" => Ok(ToySpec::td3(n, seed)?),
        other => {
            Err(CliError::Validation(format!("preset must be td1, td2, or td3, got {other:?}")))
        }
    }
}

pub fn cmd_dataset(args: &DatasetArgs) -> Result<(), CliError> {
    let spec = match (&args.preset, &args.centers) {
        (Some(name), None) => toy_spec(name, args.n, args.seed)?,
        (None, Some(centers)) => {
            let parsed = parse_points("centers", centers)?;
            let mut fixed = Vec::with_capacity(parsed.len());
            for p in &parsed {
                if p.len() != 2 {
                    return Err(CliError::Validation(format!(
                        "centers must be 2-dimensional, got {p:?}"
                    )));
                }
                fixed.push([p[0], p[1]]);
            }
            let radius = args.radius.unwrap_or(TOY_RADIUS);
            ToySpec::new(fixed, radius, args.n, args.seed)?
        }
        _ => {
            return Err(CliError::Validation(
                "pass exactly one of --preset or --centers".into(),
            ))
        }
    };
    let data = make_toy(&spec)?;
    save_csv(&data, &args.out)?;
    println!("wrote {} points to {}", data.len(), args.out.display());
    Ok(())
}

/// Builds the layered config: defaults, then `--config`, then flags.
fn assemble_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => load_config_file(path)?,
        None => RunConfig::default(),
    };
    args.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir_for(args: &TrainArgs, cfg: &RunConfig) -> PathBuf {
    match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let name = format!(
                "{}-{}-k{}-seed{}",
                cfg.mode.as_str(),
                cfg.data.label(),
                cfg.train.k,
                cfg.train.seed
            );
            out_root().join(name)
        }
    }
}

/// Removes the artifacts a previous run left behind, leaving anything else in
/// the directory alone.
fn clear_run_dir(dir: &Path) -> Result<(), CliError> {
    for name in
        [CONFIG_FILE, DATA_FILE, HISTORY_FILE, ENSEMBLE_FILE, KGENERATORS_FILE, METRICS_FILE,
            FIGURE_FILE]
    {
        let path = dir.join(name);
        if path.exists() {
            fs::remove_file(&path).map_err(CliError::io("removing", &path))?;
        }
    }
    let checkpoints = dir.join(CHECKPOINT_DIR);
    if checkpoints.exists() {
        fs::remove_dir_all(&checkpoints).map_err(CliError::io("removing", &checkpoints))?;
    }
    Ok(())
}

fn materialize_data(cfg: &RunConfig, dir: &Path) -> Result<Dataset, CliError> {
    let data = match &cfg.data {
        DataSource::Preset { name, n } => make_toy(&toy_spec(name, *n, cfg.train.seed)?)?,
        DataSource::File { path } => load_csv(Path::new(path))?,
    };
    save_csv(&data, &dir.join(DATA_FILE))?;
    Ok(data)
}

fn write_checkpoint(dir: &Path, state: &TrainerState) -> Result<(), CliError> {
    let path = dir.join(CHECKPOINT_DIR).join(format!("epoch-{:04}.json", state.epoch_next - 1));
    let json = serde_json::to_string(state)
        .map_err(|e| CliError::Runtime(format!("could not serialize checkpoint: {e}")))?;
    fs::write(&path, json).map_err(CliError::io("writing", &path))
}

/// Mean of one history column over an epoch's rows, for the progress line.
fn epoch_means(rows: &[kgans_core::ensemble::HistoryRow]) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = rows.len() as f64;
    let critic = rows.iter().map(|r| r.critic_loss).sum::<f64>() / n;
    let gen = rows.iter().map(|r| r.generator_loss).sum::<f64>() / n;
    (critic, gen)
}

fn train_ensemble(cfg: &RunConfig, data: Dataset, dir: &Path) -> Result<(), CliError> {
    let cost = CostFunction::lp(cfg.cost_p)?;
    let mut trainer = Trainer::new(data, cfg.train.clone(), cfg.gan.clone(), cost)?;
    let history_path = dir.join(HISTORY_FILE);
    fs::write(&history_path, history_csv_header(trainer.ensemble().dim()))
        .map_err(CliError::io("writing", &history_path))?;
    run_epochs(&mut trainer, cfg, dir)
}

/// Drives the epoch loop, appending history and checkpoints as it goes, then
/// writes the final model.
fn run_epochs(trainer: &mut Trainer, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let history_path = dir.join(HISTORY_FILE);
    while !trainer.is_finished() {
        let rows = trainer.run_epoch()?;
        let mut chunk = String::new();
        for row in &rows {
            chunk.push_str(&history_row_csv(row));
        }
        append(&history_path, &chunk)?;
        write_checkpoint(dir, &trainer.to_state())?;
        let (critic, gen) = epoch_means(&rows);
        println!(
            "epoch {}/{}  critic {critic:+.4}  generator {gen:+.4}",
            trainer.epochs_done(),
            cfg.train.epochs
        );
    }
    let state = trainer.ensemble().to_state();
    let path = dir.join(ENSEMBLE_FILE);
    let json = serde_json::to_string_pretty(&state)
        .map_err(|e| CliError::Runtime(format!("could not serialize ensemble: {e}")))?;
    fs::write(&path, json).map_err(CliError::io("writing", &path))?;
    println!("weights {:?}", trainer.ensemble().weights());
    Ok(())
}

fn append(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(CliError::io("opening", path))?;
    file.write_all(text.as_bytes()).map_err(CliError::io("writing", path))
}

fn train_kgenerators(cfg: &RunConfig, data: Dataset, dir: &Path) -> Result<(), CliError> {
    let cost = CostFunction::lp(cfg.cost_p)?;
    let result = run_kgenerators_with_rule(
        &data,
        cfg.train.k,
        cost,
        cfg.rounds,
        cfg.train.seed,
        cfg.update_rule,
    )?;
    let mut history = String::from("round,objective\n");
    for (round, objective) in result.objectives.iter().enumerate() {
        history.push_str(&format!("{round},{objective:.16e}\n"));
    }
    let history_path = dir.join(HISTORY_FILE);
    fs::write(&history_path, history).map_err(CliError::io("writing", &history_path))?;
    let path = dir.join(KGENERATORS_FILE);
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| CliError::Runtime(format!("could not serialize model: {e}")))?;
    fs::write(&path, json).map_err(CliError::io("writing", &path))?;
    println!(
        "{} rounds, objective {:.6} -> {:.6}",
        result.trajectory.len() - 1,
        result.objectives.first().unwrap_or(&f64::NAN),
        result.objectives.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    if args.resume {
        return resume_train(args);
    }
    let cfg = assemble_config(args)?;
    let dir = run_dir_for(args, &cfg);
    if dir.join(CONFIG_FILE).exists() {
        if !args.force {
            return Err(CliError::Validation(format!(
                "{} already holds a run; pass --force to overwrite or --resume to continue",
                dir.display()
            )));
        }
        clear_run_dir(&dir)?;
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(CliError::io("creating", &dir))?;
    let data = materialize_data(&cfg, &dir)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_json()?).map_err(CliError::io("writing", &config_path))?;
    println!("run directory {}", dir.display());
    match cfg.mode {
        RunMode::Kgans => train_ensemble(&cfg, data, &dir)?,
        RunMode::Kgenerators => train_kgenerators(&cfg, data, &dir)?,
    }
    Ok(())
}

/// Continues a checkpointed run. Only `--epochs` may differ from the stored
/// config; history rows at or past the checkpoint's next epoch are dropped so
/// the resumed file matches an uninterrupted run byte for byte.
fn resume_train(args: &TrainArgs) -> Result<(), CliError> {
    let dir = args
        .out
        .clone()
        .ok_or_else(|| CliError::Validation("--resume needs --out <run directory>".into()))?;
    let stored_text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| CliError::Validation(format!("no run to resume in {}: {e}", dir.display())))?;
    let stored = RunConfig::from_json(&stored_text)?;
    if stored.mode != RunMode::Kgans {
        return Err(CliError::Validation(
            "only kgans runs checkpoint; kgenerators runs finish in one call".into(),
        ));
    }
    let mut cfg = stored.clone();
    args.apply(&mut cfg)?;
    cfg.validate()?;
    if !same_except_epochs(&stored, &cfg)? {
        return Err(CliError::Validation(
            "resume may only change --epochs; other settings differ from the stored config".into(),
        ));
    }

    let mut state = latest_checkpoint(&dir)?;
    state.config.epochs = cfg.train.epochs;
    let data = load_csv(&dir.join(DATA_FILE))?;
    let cost = CostFunction::lp(cfg.cost_p)?;
    let mut trainer = Trainer::from_state(data, state, cost)?;

    truncate_history(&dir.join(HISTORY_FILE), trainer.epochs_done())?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_json()?).map_err(CliError::io("writing", &config_path))?;
    println!("resuming {} at epoch {}", dir.display(), trainer.epochs_done());
    run_epochs(&mut trainer, &cfg, &dir)
}

fn latest_checkpoint(dir: &Path) -> Result<TrainerState, CliError> {
    let checkpoints = dir.join(CHECKPOINT_DIR);
    let entries = fs::read_dir(&checkpoints).map_err(CliError::io("reading", &checkpoints))?;
    let mut latest: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(CliError::io("reading", &checkpoints))?.path();
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(num) =
            name.strip_prefix("epoch-").and_then(|rest| rest.strip_suffix(".json"))
        {
            if let Ok(epoch) = num.parse::<usize>() {
                if latest.as_ref().is_none_or(|(best, _)| epoch > *best) {
                    latest = Some((epoch, path));
                }
            }
        }
    }
    let (_, path) = latest.ok_or_else(|| {
        CliError::Validation(format!("no checkpoints under {}", checkpoints.display()))
    })?;
    let text = fs::read_to_string(&path).map_err(CliError::io("reading", &path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("corrupt checkpoint {}: {e}", path.display())))
}

/// Keeps the header and every row whose epoch precedes `epoch_next`.
fn truncate_history(path: &Path, epoch_next: usize) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io("reading", path))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            kept.push_str(line);
            kept.push('\n');
            continue;
        }
        let epoch: usize = line
            .split(',')
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Runtime(format!("corrupt history line {}", i + 1)))?;
        if epoch < epoch_next {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(CliError::io("writing", path))
}

/// What `eval` writes to `metrics.json` (and stdout).
#[derive(Serialize)]
struct Metrics {
    coverage: f64,
    precision: f64,
    /// Model cell weights (empirical data shares for kgenerators runs).
    weights: Vec<f64>,
    /// How many of the drawn samples came from each cell.
    cell_counts: Vec<usize>,
    samples: usize,
    grid_bins: usize,
    seed: u64,
    /// SHA-256 of the run's `config.json` bytes.
    config_hash: String,
    /// Unix seconds; the one field allowed to differ between identical runs.
    generated_at: u64,
}

/// The two trained-model kinds `eval` knows how to read back.
enum Model {
    Ensemble(Ensemble),
    KGenerators(KGenerators),
}

impl Model {
    fn load(dir: &Path, cost: CostFunction) -> Result<Self, CliError> {
        let ensemble_path = dir.join(ENSEMBLE_FILE);
        if ensemble_path.exists() {
            let text =
                fs::read_to_string(&ensemble_path).map_err(CliError::io("reading", &ensemble_path))?;
            let state: EnsembleState = serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("corrupt ensemble.json: {e}")))?;
            return Ok(Self::Ensemble(Ensemble::from_state(state, cost)?));
        }
        let kg_path = dir.join(KGENERATORS_FILE);
        if kg_path.exists() {
            let text = fs::read_to_string(&kg_path).map_err(CliError::io("reading", &kg_path))?;
            let model: KGenerators = serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("corrupt kgenerators.json: {e}")))?;
            return Ok(Self::KGenerators(model));
        }
        Err(CliError::Validation(format!(
            "no trained model in {}; run `kgans train` first",
            dir.display()
        )))
    }

    fn sample_with_cells(&self, n: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
        match self {
            Self::Ensemble(e) => Ok(e.sample_with_cells(n, seed)?),
            Self::KGenerators(k) => Ok(k.sample_with_cells(n, seed)?),
        }
    }

    fn k(&self) -> usize {
        match self {
            Self::Ensemble(e) => e.k(),
            Self::KGenerators(k) => k.k(),
        }
    }

    fn prototypes(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Ensemble(e) => e.prototypes().to_vec(),
            Self::KGenerators(k) => k.prototypes.clone(),
        }
    }

    fn weights(&self) -> Vec<f64> {
        match self {
            Self::Ensemble(e) => e.weights().to_vec(),
            Self::KGenerators(k) => {
                let sizes = k.cell_sizes();
                let total: usize = sizes.iter().sum();
                sizes.iter().map(|&s| s as f64 / total as f64).collect()
            }
        }
    }
}

fn mask_set(cfg: &RunConfig, args: &EvalArgs) -> Result<MaskSet, CliError> {
    if let Some(centers) = &args.masks {
        let parsed = parse_points("masks", centers)?;
        let mut fixed = Vec::with_capacity(parsed.len());
        for p in &parsed {
            if p.len() != 2 {
                return Err(CliError::Validation(format!(
                    "masks must be 2-dimensional, got {p:?}"
                )));
            }
            fixed.push([p[0], p[1]]);
        }
        return Ok(MaskSet::new(fixed, args.mask_radius.unwrap_or(TOY_RADIUS))?);
    }
    match &cfg.data {
        DataSource::Preset { name, n } => {
            Ok(MaskSet::from_spec(&toy_spec(name, *n, cfg.train.seed)?))
        }
        DataSource::File { .. } => Err(CliError::Validation(
            "file-based runs carry no mask geometry; pass --masks (and optionally --mask-radius)"
                .into(),
        )),
    }
}

/// Every `stride`-th element, up to the figure cap, preserving order.
fn thin<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|i| items[i * items.len() / cap].clone()).collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let dir = &args.run;
    let config_path = dir.join(CONFIG_FILE);
    let config_bytes = fs::read(&config_path).map_err(|e| {
        CliError::Validation(format!("not a run directory {}: {e}", dir.display()))
    })?;
    let cfg = RunConfig::from_json(&String::from_utf8_lossy(&config_bytes))?;
    let samples = args.samples.unwrap_or(cfg.eval.samples);
    let bins = args.bins.unwrap_or(cfg.eval.bins);
    let seed = args.seed.unwrap_or(cfg.train.seed);
    if samples == 0 {
        return Err(CliError::Validation("samples must be at least 1".into()));
    }

    let cost = CostFunction::lp(cfg.cost_p)?;
    let model = Model::load(dir, cost.clone())?;
    let masks = mask_set(&cfg, args)?;
    let grid = GridSpec::new(bins, -1.0, 1.0)?;

    let tagged = model.sample_with_cells(samples, seed)?;
    let points: Vec<Vec<f64>> = tagged.iter().map(|(_, p)| p.clone()).collect();
    let mut cell_counts = vec![0usize; model.k()];
    for (cell, _) in &tagged {
        cell_counts[*cell] += 1;
    }

    let metrics = Metrics {
        coverage: coverage(&points, &masks, &grid)?,
        precision: precision(&points, &masks)?,
        weights: model.weights(),
        cell_counts,
        samples,
        grid_bins: bins,
        seed,
        config_hash: hex_digest(&config_bytes),
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::Runtime(format!("could not serialize metrics: {e}")))?;
    json.push('\n');
    let metrics_path = dir.join(METRICS_FILE);
    fs::write(&metrics_path, &json).map_err(CliError::io("writing", &metrics_path))?;
    print!("{json}");

    let real = load_csv(&dir.join(DATA_FILE))?;
    let tessellation = Tessellation::voronoi(model.prototypes(), cost)?;
    export_figure(
        &thin(real.points(), FIGURE_POINT_CAP),
        &thin(&tagged, FIGURE_POINT_CAP),
        &tessellation,
        Some(&masks),
        &dir.join(FIGURE_FILE),
    )?;
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Serialize)]
struct OtReport {
    objective: f64,
    converged: bool,
    iterations: usize,
    residual: f64,
    dual_weights: Vec<f64>,
    cell_masses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactReport>,
}

#[derive(Serialize)]
struct ExactReport {
    cost: f64,
    /// `exact cost − dual objective`; nonnegative up to solver tolerance.
    gap: f64,
}

pub fn cmd_ot(args: &OtArgs) -> Result<(), CliError> {
    let data = load_csv(&args.data)?;
    let mu = EmpiricalMeasure::new(data.points().to_vec())?;
    let atoms = parse_points("atoms", &args.atoms)?;
    let nu = match &args.weights {
        Some(w) => DiscreteMeasure::new(atoms, parse_weights(w)?)?,
        None => DiscreteMeasure::uniform(atoms)?,
    };
    let cost = CostFunction::lp(args.p)?;
    let solution = solve_dual(&mu, &nu, &cost, args.step, args.max_iters, args.tol)?;
    let masses = cell_masses(&mu, &nu, &cost, &solution.dual_weights)?;
    let exact = if args.exact {
        let exact = ot_exact_small(&mu, &nu, &cost)?;
        Some(ExactReport { cost: exact.cost, gap: exact.cost - solution.objective })
    } else {
        None
    };
    let report = OtReport {
        objective: solution.objective,
        converged: solution.converged,
        iterations: solution.iterations,
        residual: solution.residual,
        dual_weights: solution.dual_weights,
        cell_masses: masses,
        exact,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("could not serialize report: {e}")))?;
    println!("{json}");
    Ok(())
}
