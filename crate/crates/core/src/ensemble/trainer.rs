//! The joint training loop over prototypes and generator/critic pairs.
//!
//! Each epoch runs `iters_per_epoch` iterations for every cell. An iteration
//! draws one batch from the data (the draw is keyed by `(epoch, iteration)`
//! alone, so every cell sees the same batch and splits it), keeps the points
//! landing in the cell, trains that cell's GAN on them, and — once the cell is
//! past its burn-in — moves the prototype one Adam step toward the cell's own
//! generated samples. Mixture weights are re-estimated from the full dataset
//! at every epoch boundary.
//!
//! Two schedules are offered. The sequential schedule nests cells outside
//! iterations and lets every prototype update take effect immediately, so
//! later cells within the same epoch partition against earlier cells' already
//! moved prototypes. The `parallel_epochs` schedule freezes the other
//! prototypes at their epoch-start positions (each cell still tracks its own
//! prototype live) and publishes all movement at the epoch boundary; cells
//! then evolve independently given the epoch-start state, which makes the
//! schedule safe to run on threads — and it does — while remaining
//! bit-identical to a single-threaded evaluation of the same rule. Under that
//! schedule, permuting the initial prototypes permutes the trained components
//! and changes nothing else; the sequential schedule only guarantees that
//! when prototypes are frozen (`alpha_proto = 0`), because its cells react to
//! one another mid-epoch in slot order.
//!
//! All randomness is derived from the master seed and absolute coordinates
//! (epoch, iteration, stream), never from a stateful generator carried across
//! iterations. Resuming from a serialized [`TrainerState`] therefore replays
//! the exact run that uninterrupted training would have produced.

use std::thread;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gan::{Gan, GanConfig};
use crate::partition::Tessellation;
use crate::rng::{derive_seed, rng_from, streams};
use crate::transport::CostFunction;

use super::init::{init_prototypes, InitStrategy};
use super::{Ensemble, EnsembleState};

/// How many epochs to run by default.
pub const DEFAULT_EPOCHS: usize = 60;
/// Per-cell iterations per epoch by default.
pub const DEFAULT_ITERS_PER_EPOCH: usize = 1000;
/// Iterations a cell's GAN trains before its prototype starts moving.
pub const DEFAULT_BURN_IN: usize = 600;
/// Prototype learning rate.
pub const DEFAULT_ALPHA_PROTO: f64 = 1e-3;
/// Consecutive empty batches tolerated before a prototype is reseeded.
pub const DEFAULT_EMPTY_CELL_PATIENCE: usize = 50;

/// Settings of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of cells (prototype + GAN pairs).
    pub k: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    /// Points drawn per iteration before cell filtering.
    pub batch_size: usize,
    /// Prototype learning rate; zero freezes the prototypes entirely.
    pub alpha_proto: f64,
    /// Executed iterations a cell waits before its prototype moves.
    pub burn_in: usize,
    pub init: InitStrategy,
    /// Master seed; every random draw in the run derives from it.
    pub seed: u64,
    /// Consecutive empty sub-batches before the starved prototype is
    /// reseeded onto a random data point.
    pub empty_cell_patience: usize,
    /// Freeze the other cells' prototypes for the duration of each epoch and
    /// train the cells on threads. See the module docs for the trade-off
    /// against the sequential schedule.
    pub parallel_epochs: bool,
}

impl TrainConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            epochs: DEFAULT_EPOCHS,
            iters_per_epoch: DEFAULT_ITERS_PER_EPOCH,
            batch_size: 100,
            alpha_proto: DEFAULT_ALPHA_PROTO,
            burn_in: DEFAULT_BURN_IN,
            init: InitStrategy::KMeans,
            seed,
            empty_cell_patience: DEFAULT_EMPTY_CELL_PATIENCE,
            parallel_epochs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.epochs == 0 || self.iters_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "epochs and iterations per epoch must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !self.alpha_proto.is_finite() || self.alpha_proto < 0.0 {
            return Err(Error::InvalidArgument(
                "prototype learning rate must be finite and non-negative".into(),
            ));
        }
        if self.burn_in >= self.epochs * self.iters_per_epoch {
            return Err(Error::InvalidArgument(format!(
                "burn-in of {} leaves no iterations for prototype movement in {} x {}",
                self.burn_in, self.epochs, self.iters_per_epoch
            )));
        }
        if self.empty_cell_patience == 0 {
            return Err(Error::InvalidArgument("empty-cell patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One executed training iteration of one cell. Skipped iterations (empty
/// sub-batch) leave no row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Iteration index within the epoch.
    pub iteration: usize,
    pub cell: usize,
    /// Critic estimate of the fake-real gap, averaged over the critic steps
    /// of the iteration.
    pub critic_loss: f64,
    pub generator_loss: f64,
    /// Lipschitz penalty, averaged over the critic steps.
    pub penalty: f64,
    /// Prototype position after the iteration.
    pub prototype: Vec<f64>,
}

/// Serializable snapshot of a run between epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub ensemble: EnsembleState,
    /// Consecutive empty sub-batches per cell.
    pub patience: Vec<usize>,
    /// Executed iterations per cell (burn-in counts these, not calendar
    /// iterations).
    pub iters_done: Vec<usize>,
    /// Next epoch to run.
    pub epoch_next: usize,
}

/// Drives an ensemble through training epochs and can checkpoint itself
/// between them.
#[derive(Clone, Debug)]
pub struct Trainer {
    data: Dataset,
    config: TrainConfig,
    ensemble: Ensemble,
    patience: Vec<usize>,
    iters_done: Vec<usize>,
    epoch_next: usize,
}

/// Everything one cell's epoch hands back under the parallel schedule.
struct CellOutcome {
    gan: Gan,
    proto_adam: AdamState,
    prototype: Vec<f64>,
    patience: usize,
    iters_done: usize,
    rows: Vec<HistoryRow>,
}

impl Trainer {
    /// Initialize a run: prototypes from the configured strategy, all GANs
    /// with identical freshly seeded weights, mixture weights from the
    /// resulting partition of the data.
    pub fn new(
        data: Dataset,
        config: TrainConfig,
        gan_config: GanConfig,
        cost: CostFunction,
    ) -> Result<Self> {
        config.validate()?;
        let prototypes = init_prototypes(&data, config.k, config.init, config.seed)?;
        Self::with_prototypes(data, config, gan_config, cost, prototypes)
    }

    /// Initialize with explicit starting prototypes instead of running the
    /// configured init strategy.
    pub fn with_prototypes(
        data: Dataset,
        config: TrainConfig,
        gan_config: GanConfig,
        cost: CostFunction,
        prototypes: Vec<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        if prototypes.len() != config.k {
            return Err(Error::ShapeMismatch(format!(
                "{} starting prototypes for k = {}",
                prototypes.len(),
                config.k
            )));
        }
        // Every cell starts from the same network weights; cells diverge only
        // through the data they see. This is what makes relabeling the cells
        // a pure permutation of the run.
        let gan = Gan::new(gan_config, data.dim(), config.seed)?;
        let gans = vec![gan; config.k];
        let proto_adams = vec![AdamState::new(data.dim(), config.alpha_proto); config.k];
        let weights = vec![1.0 / config.k as f64; config.k];
        let mut ensemble = Ensemble::from_parts(prototypes, weights, gans, proto_adams, cost)?;
        ensemble.estimate_weights(&data)?;
        Ok(Self {
            data,
            patience: vec![0; config.k],
            iters_done: vec![0; config.k],
            epoch_next: 0,
            config,
            ensemble,
        })
    }

    /// Restore a checkpointed run. The dataset and ground cost are not part
    /// of the snapshot and must be supplied again.
    pub fn from_state(data: Dataset, state: TrainerState, cost: CostFunction) -> Result<Self> {
        state.config.validate()?;
        let ensemble = Ensemble::from_state(state.ensemble, cost)?;
        if ensemble.k() != state.config.k {
            return Err(Error::ShapeMismatch(format!(
                "snapshot holds {} cells but its config says k = {}",
                ensemble.k(),
                state.config.k
            )));
        }
        if state.patience.len() != state.config.k || state.iters_done.len() != state.config.k {
            return Err(Error::ShapeMismatch("per-cell counters do not match k".into()));
        }
        if ensemble.dim() != data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "snapshot is {}-dimensional but the dataset is {}-dimensional",
                ensemble.dim(),
                data.dim()
            )));
        }
        Ok(Self {
            data,
            config: state.config,
            ensemble,
            patience: state.patience,
            iters_done: state.iters_done,
            epoch_next: state.epoch_next,
        })
    }

    pub fn to_state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            ensemble: self.ensemble.to_state(),
            patience: self.patience.clone(),
            iters_done: self.iters_done.clone(),
            epoch_next: self.epoch_next,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    /// Index of the next epoch to run (equals the number of completed epochs).
    pub fn epochs_done(&self) -> usize {
        self.epoch_next
    }

    pub fn is_finished(&self) -> bool {
        self.epoch_next >= self.config.epochs
    }

    /// Run one epoch and return its executed-iteration history, ordered by
    /// cell and then iteration.
    pub fn run_epoch(&mut self) -> Result<Vec<HistoryRow>> {
        if self.is_finished() {
            return Err(Error::InvalidArgument(format!(
                "all {} epochs already ran",
                self.config.epochs
            )));
        }
        let rows = if self.config.parallel_epochs {
            self.run_epoch_parallel()?
        } else {
            self.run_epoch_sequential()?
        };
        self.ensemble.estimate_weights(&self.data)?;
        self.epoch_next += 1;
        Ok(rows)
    }

    /// Run all remaining epochs.
    pub fn run_to_completion(&mut self) -> Result<Vec<HistoryRow>> {
        let mut rows = Vec::new();
        while !self.is_finished() {
            rows.extend(self.run_epoch()?);
        }
        Ok(rows)
    }

    fn run_epoch_sequential(&mut self) -> Result<Vec<HistoryRow>> {
        let epoch = self.epoch_next;
        let mut rows = Vec::new();
        for j in 0..self.config.k {
            rows.extend(run_cell_epoch(
                &self.data,
                &self.config,
                &self.ensemble.cost,
                epoch,
                j,
                &mut self.ensemble.gans[j],
                &mut self.ensemble.proto_adams[j],
                &mut self.patience[j],
                &mut self.iters_done[j],
                &mut self.ensemble.prototypes,
            )?);
        }
        Ok(rows)
    }

    fn run_epoch_parallel(&mut self) -> Result<Vec<HistoryRow>> {
        let epoch = self.epoch_next;
        let frozen = self.ensemble.prototypes.clone();
        let outcomes: Vec<std::result::Result<Result<CellOutcome>, _>> = thread::scope(|s| {
            let mut handles = Vec::with_capacity(self.config.k);
            for j in 0..self.config.k {
                let mut gan = self.ensemble.gans[j].clone();
                let mut proto_adam = self.ensemble.proto_adams[j].clone();
                let mut patience = self.patience[j];
                let mut iters_done = self.iters_done[j];
                let mut view = frozen.clone();
                let data = &self.data;
                let config = &self.config;
                let cost = &self.ensemble.cost;
                handles.push(s.spawn(move || -> Result<CellOutcome> {
                    let rows = run_cell_epoch(
                        data,
                        config,
                        cost,
                        epoch,
                        j,
                        &mut gan,
                        &mut proto_adam,
                        &mut patience,
                        &mut iters_done,
                        &mut view,
                    )?;
                    Ok(CellOutcome {
                        gan,
                        proto_adam,
                        prototype: view.swap_remove(j),
                        patience,
                        iters_done,
                        rows,
                    })
                }));
            }
            handles.into_iter().map(|h| h.join()).collect()
        });
        let mut rows = Vec::new();
        for (j, joined) in outcomes.into_iter().enumerate() {
            let outcome = joined.unwrap_or_else(|_| panic!("cell {j} training thread panicked"))?;
            self.ensemble.gans[j] = outcome.gan;
            self.ensemble.proto_adams[j] = outcome.proto_adam;
            self.ensemble.prototypes[j] = outcome.prototype;
            self.patience[j] = outcome.patience;
            self.iters_done[j] = outcome.iters_done;
            rows.extend(outcome.rows);
        }
        Ok(rows)
    }
}

/// Train one cell for one epoch against the prototype slice it was handed.
/// The cell reads all prototypes for partitioning and writes only slot `j`,
/// so the caller chooses the schedule: pass the live shared slice for
/// sequential training or a frozen epoch-start copy for parallel training.
#[allow(clippy::too_many_arguments)]
fn run_cell_epoch(
    data: &Dataset,
    config: &TrainConfig,
    cost: &CostFunction,
    epoch: usize,
    j: usize,
    gan: &mut Gan,
    proto_adam: &mut AdamState,
    patience: &mut usize,
    iters_done: &mut usize,
    prototypes: &mut [Vec<f64>],
) -> Result<Vec<HistoryRow>> {
    let master = config.seed;
    let points = data.points();
    let mut rows = Vec::new();
    for m in 0..config.iters_per_epoch {
        let (e64, m64) = (epoch as u64, m as u64);
        // The batch stream is keyed by (epoch, iteration) only: every cell
        // re-derives the same draw and takes its own share of it.
        let mut batch_rng = rng_from(master, &[streams::BATCH, e64, m64]);
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            batch.push(points[batch_rng.random_range(0..points.len())].clone());
        }
        let sub = if prototypes.len() == 1 {
            batch
        } else {
            let tess = Tessellation::voronoi(prototypes.to_vec(), cost.clone())?;
            tess.filter_batch(&batch, j)?
        };
        if sub.is_empty() {
            *patience += 1;
            if *patience >= config.empty_cell_patience {
                // A starved prototype restarts on a random data point. The
                // stream is keyed by the prototype's own coordinates rather
                // than its slot, so relabeled runs reseed identically.
                let mut tags = vec![streams::EMPTY_RESEED, e64, m64];
                tags.extend(prototypes[j].iter().map(|v| v.to_bits()));
                let mut rng = rng_from(master, &tags);
                prototypes[j] = points[rng.random_range(0..points.len())].clone();
                proto_adam.reset();
                *patience = 0;
            }
            continue;
        }
        *patience = 0;
        let iter_seed = derive_seed(master, &[streams::TRAIN_ITER, e64, m64]);
        let report = gan.train_iteration(&sub, iter_seed)?;
        *iters_done += 1;
        if *iters_done > config.burn_in && config.alpha_proto > 0.0 {
            let proto_seed = derive_seed(master, &[streams::PROTO_NOISE, e64, m64]);
            let samples = gan.generator().sample(gan.config().batch_size, proto_seed)?;
            let mut grad = vec![0.0; prototypes[j].len()];
            for x in &samples {
                let g = cost.grad_y(x, &prototypes[j])?;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            for g in &mut grad {
                *g /= samples.len() as f64;
            }
            proto_adam.step(&mut prototypes[j], &grad)?;
        }
        let steps = report.critic.len() as f64;
        rows.push(HistoryRow {
            epoch,
            iteration: m,
            cell: j,
            critic_loss: report.critic.iter().map(|c| c.wasserstein).sum::<f64>() / steps,
            generator_loss: report.generator.loss,
            penalty: report.critic.iter().map(|c| c.penalty).sum::<f64>() / steps,
            prototype: prototypes[j].clone(),
        });
    }
    Ok(rows)
}

/// Train a fresh ensemble end to end. Returns the trained ensemble and the
/// full executed-iteration history.
pub fn run_kgans(
    data: Dataset,
    config: TrainConfig,
    gan_config: GanConfig,
    cost: CostFunction,
) -> Result<(Ensemble, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(data, config, gan_config, cost)?;
    let rows = trainer.run_to_completion()?;
    Ok((trainer.into_ensemble(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_toy, ToySpec};

    fn tiny_gan_config() -> GanConfig {
        GanConfig {
            latent_dim: 3,
            generator_hidden: vec![6, 4],
            critic_hidden: vec![6],
            critic_steps: 2,
            batch_size: 8,
            ..GanConfig::default()
        }
    }

    fn tiny_train_config(k: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            iters_per_epoch: 10,
            batch_size: 12,
            burn_in: 2,
            ..TrainConfig::new(k, seed)
        }
    }

    fn two_blob_data(seed: u64) -> Dataset {
        let spec =
            ToySpec::new(vec![[-0.5, 0.0], [0.5, 0.0]], 0.25, 80, seed).unwrap();
        make_toy(&spec).unwrap()
    }

    fn ensemble_json(e: &Ensemble) -> String {
        serde_json::to_string(&e.to_state()).unwrap()
    }

    #[test]
    fn single_cell_runs_every_iteration_on_the_full_batch() {
        let data = two_blob_data(3);
        let config = tiny_train_config(1, 17);
        let (ensemble, rows) =
            run_kgans(data, config, tiny_gan_config(), CostFunction::lp(2.0).unwrap()).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.cell == 0));
        assert!(rows.iter().enumerate().all(|(m, r)| r.iteration == m && r.epoch == 0));
        assert_eq!(ensemble.weights(), &[1.0]);
    }

    #[test]
    fn zero_prototype_rate_freezes_the_prototypes() {
        let data = two_blob_data(4);
        let mut config = tiny_train_config(2, 99);
        config.alpha_proto = 0.0;
        let start = init_prototypes(&data, 2, config.init, config.seed).unwrap();
        let (ensemble, rows) = run_kgans(
            data,
            config,
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        assert_eq!(ensemble.prototypes(), &start[..]);
        assert!(rows.iter().all(|r| r.prototype == start[r.cell]));
    }

    #[test]
    fn burn_in_gates_prototype_movement() {
        let data = two_blob_data(5);
        let mut config = tiny_train_config(2, 7);
        config.alpha_proto = 1e-2;
        config.burn_in = 4;
        let start = init_prototypes(&data, 2, config.init, config.seed).unwrap();
        let (_, rows) = run_kgans(
            data,
            config,
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        for (cell, start_proto) in start.iter().enumerate() {
            let cell_rows: Vec<&HistoryRow> = rows.iter().filter(|r| r.cell == cell).collect();
            // Both blobs hold half the batch on average, so no iteration is
            // skipped here and executed count equals calendar count.
            assert_eq!(cell_rows.len(), 10);
            for (done, row) in cell_rows.iter().enumerate() {
                if done < 4 {
                    assert_eq!(&row.prototype, start_proto, "moved during burn-in");
                } else {
                    assert_ne!(&row.prototype, start_proto, "frozen after burn-in");
                }
            }
        }
    }

    #[test]
    fn starved_cell_reseeds_onto_a_data_point() {
        let spec = ToySpec::new(vec![[0.5, 0.5]], 0.2, 60, 8).unwrap();
        let data = make_toy(&spec).unwrap();
        let points = data.points().to_vec();
        let mut config = tiny_train_config(2, 21);
        config.alpha_proto = 0.0;
        config.empty_cell_patience = 3;
        // Cell 1 starts far from the single blob and can never win a point.
        let far = vec![vec![0.5, 0.5], vec![-0.9, -0.9]];
        let mut trainer = Trainer::with_prototypes(
            data,
            config,
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
            far,
        )
        .unwrap();
        let rows = trainer.run_to_completion().unwrap();
        let reseeded = trainer.ensemble().prototypes()[1].clone();
        assert!(
            points.contains(&reseeded),
            "prototype 1 should sit on a data point, got {reseeded:?}"
        );
        // Three skipped iterations, then the reseeded prototype claims part
        // of the blob and trains.
        let cell1_rows = rows.iter().filter(|r| r.cell == 1).count();
        assert!((1..=7).contains(&cell1_rows), "{cell1_rows} executed iterations");
    }

    #[test]
    fn checkpoint_resume_replays_the_uninterrupted_run() {
        let data = two_blob_data(6);
        let mut config = tiny_train_config(2, 33);
        config.epochs = 2;
        config.alpha_proto = 1e-2;

        let mut fresh = Trainer::new(
            data.clone(),
            config.clone(),
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let fresh_rows = fresh.run_to_completion().unwrap();

        let mut first = Trainer::new(
            data.clone(),
            config,
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
        )
        .unwrap();
        let mut resumed_rows = first.run_epoch().unwrap();
        let json = serde_json::to_string(&first.to_state()).unwrap();
        let state: TrainerState = serde_json::from_str(&json).unwrap();
        let mut second =
            Trainer::from_state(data, state, CostFunction::lp(2.0).unwrap()).unwrap();
        resumed_rows.extend(second.run_to_completion().unwrap());

        assert_eq!(fresh_rows, resumed_rows);
        assert_eq!(ensemble_json(fresh.ensemble()), ensemble_json(second.ensemble()));
    }

    #[test]
    fn parallel_schedule_is_deterministic() {
        let data = two_blob_data(9);
        let mut config = tiny_train_config(2, 55);
        config.parallel_epochs = true;
        config.alpha_proto = 1e-2;
        let run = |data: Dataset, config: TrainConfig| {
            run_kgans(data, config, tiny_gan_config(), CostFunction::lp(2.0).unwrap()).unwrap()
        };
        let (a, rows_a) = run(data.clone(), config.clone());
        let (b, rows_b) = run(data, config);
        assert_eq!(rows_a, rows_b);
        assert_eq!(ensemble_json(&a), ensemble_json(&b));
    }

    #[test]
    fn relabeling_cells_permutes_the_parallel_run() {
        let spec =
            ToySpec::new(vec![[-0.5, -0.5], [0.5, -0.5], [0.0, 0.5]], 0.25, 90, 12).unwrap();
        let data = make_toy(&spec).unwrap();
        let mut config = tiny_train_config(3, 77);
        config.parallel_epochs = true;
        config.epochs = 2;
        config.alpha_proto = 1e-2;
        let protos =
            vec![vec![-0.5, -0.5], vec![0.5, -0.5], vec![0.0, 0.5]];
        // Slot i of the permuted run starts where slot perm[i] started.
        let perm = [2usize, 0, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| protos[p].clone()).collect();

        let run = |data: Dataset, config: TrainConfig, protos: Vec<Vec<f64>>| {
            let mut t = Trainer::with_prototypes(
                data,
                config,
                tiny_gan_config(),
                CostFunction::lp(2.0).unwrap(),
                protos,
            )
            .unwrap();
            t.run_to_completion().unwrap();
            t.into_ensemble().to_state()
        };
        let base = run(data.clone(), config.clone(), protos);
        let relabeled = run(data, config, permuted);

        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(relabeled.prototypes[i], base.prototypes[p]);
            assert_eq!(relabeled.weights[i], base.weights[p]);
            assert_eq!(
                serde_json::to_string(&relabeled.gans[i]).unwrap(),
                serde_json::to_string(&base.gans[p]).unwrap()
            );
            assert_eq!(
                serde_json::to_string(&relabeled.proto_adams[i]).unwrap(),
                serde_json::to_string(&base.proto_adams[p]).unwrap()
            );
        }
    }

    #[test]
    fn sequential_relabeling_matches_with_frozen_prototypes() {
        // With alpha_proto = 0 the sequential schedule has no mid-epoch
        // interaction left, so relabeling must permute it exactly too.
        let data = two_blob_data(14);
        let mut config = tiny_train_config(2, 41);
        config.alpha_proto = 0.0;
        let protos = vec![vec![-0.5, 0.0], vec![0.5, 0.0]];
        let flipped = vec![vec![0.5, 0.0], vec![-0.5, 0.0]];
        let run = |data: Dataset, protos: Vec<Vec<f64>>| {
            let mut t = Trainer::with_prototypes(
                data,
                config.clone(),
                tiny_gan_config(),
                CostFunction::lp(2.0).unwrap(),
                protos,
            )
            .unwrap();
            t.run_to_completion().unwrap();
            t.into_ensemble().to_state()
        };
        let base = run(data.clone(), protos);
        let swapped = run(data, flipped);
        for i in 0..2 {
            assert_eq!(swapped.prototypes[i], base.prototypes[1 - i]);
            assert_eq!(
                serde_json::to_string(&swapped.gans[i]).unwrap(),
                serde_json::to_string(&base.gans[1 - i]).unwrap()
            );
        }
    }

    #[test]
    fn weights_track_the_data_split() {
        let data = two_blob_data(2);
        let expected: Vec<f64> = {
            let half = data
                .points()
                .iter()
                .filter(|p| p[0] < 0.0)
                .count() as f64;
            let n = data.len() as f64;
            vec![half / n, 1.0 - half / n]
        };
        let mut config = tiny_train_config(2, 63);
        config.alpha_proto = 0.0;
        let protos = vec![vec![-0.5, 0.0], vec![0.5, 0.0]];
        let mut trainer = Trainer::with_prototypes(
            data,
            config,
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
            protos,
        )
        .unwrap();
        trainer.run_to_completion().unwrap();
        let weights = trainer.ensemble().weights();
        assert!((weights[0] - expected[0]).abs() < 1e-12);
        assert!((weights[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_degenerate_runs() {
        assert!(TrainConfig { k: 0, ..TrainConfig::new(1, 0) }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::new(2, 0) }.validate().is_err());
        assert!(
            TrainConfig { burn_in: 60_000, ..TrainConfig::new(2, 0) }.validate().is_err()
        );
        assert!(
            TrainConfig { alpha_proto: f64::NAN, ..TrainConfig::new(2, 0) }
                .validate()
                .is_err()
        );
        assert!(
            TrainConfig { empty_cell_patience: 0, ..TrainConfig::new(2, 0) }
                .validate()
                .is_err()
        );
    }

    #[test]
    fn mismatched_prototype_count_is_rejected() {
        let data = two_blob_data(1);
        let bad = Trainer::with_prototypes(
            data,
            tiny_train_config(2, 5),
            tiny_gan_config(),
            CostFunction::lp(2.0).unwrap(),
            vec![vec![0.0, 0.0]],
        );
        assert!(bad.is_err());
    }
}
