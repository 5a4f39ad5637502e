//! The mixture of GANs and its joint training loop.
//!
//! An [`Ensemble`] couples `k` prototypes with `k` generator/critic pairs.
//! Prototypes induce a partition of data space; during training each pair
//! only sees the data of its own cell and each prototype follows its own
//! generator's samples, so the two structures shape each other. Mixture
//! weights are the observed cell masses — they are estimated from data, not
//! trained.

mod init;
mod reduce;
mod trainer;

pub use init::{init_prototypes, InitStrategy};
pub use reduce::{
    run_kgenerators, run_kgenerators_from, run_kgenerators_with_rule, KGenerators, UpdateRule,
};
pub use trainer::{run_kgans, HistoryRow, TrainConfig, Trainer, TrainerState};

use std::fmt::Write as _;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gan::Gan;
use crate::partition::Tessellation;
use crate::rng::{derive_seed, rng_from, streams};
use crate::transport::CostFunction;

/// A trained (or in-training) mixture of GANs.
#[derive(Clone, Debug)]
pub struct Ensemble {
    prototypes: Vec<Vec<f64>>,
    /// Mixture weights; the observed data mass of each cell.
    weights: Vec<f64>,
    gans: Vec<Gan>,
    proto_adams: Vec<AdamState>,
    cost: CostFunction,
}

/// Serializable snapshot of an ensemble. The ground cost is not part of the
/// snapshot (it may contain arbitrary closures); restoring requires passing
/// the same cost again.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleState {
    pub prototypes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub gans: Vec<Gan>,
    pub proto_adams: Vec<AdamState>,
}

impl Ensemble {
    pub fn from_parts(
        prototypes: Vec<Vec<f64>>,
        weights: Vec<f64>,
        gans: Vec<Gan>,
        proto_adams: Vec<AdamState>,
        cost: CostFunction,
    ) -> Result<Self> {
        let k = prototypes.len();
        if k == 0 {
            return Err(Error::InvalidArgument("ensemble must have k >= 1".into()));
        }
        if weights.len() != k || gans.len() != k || proto_adams.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} prototypes but {} weights, {} gans, {} optimizer states",
                weights.len(),
                gans.len(),
                proto_adams.len()
            )));
        }
        let dim = prototypes[0].len();
        if prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("prototypes have inconsistent dimensions".into()));
        }
        if gans.iter().any(|g| g.data_dim() != dim) {
            return Err(Error::ShapeMismatch(
                "generator output dimension does not match prototypes".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1 within 1e-9, got {total}"
            )));
        }
        Ok(Self { prototypes, weights, gans, proto_adams, cost })
    }

    pub fn from_state(state: EnsembleState, cost: CostFunction) -> Result<Self> {
        Self::from_parts(state.prototypes, state.weights, state.gans, state.proto_adams, cost)
    }

    pub fn to_state(&self) -> EnsembleState {
        EnsembleState {
            prototypes: self.prototypes.clone(),
            weights: self.weights.clone(),
            gans: self.gans.clone(),
            proto_adams: self.proto_adams.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gans(&self) -> &[Gan] {
        &self.gans
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    /// The partition induced by the current prototypes. Dual weights stay
    /// equal during GAN training, so this is a plain nearest-prototype
    /// partition.
    pub fn tessellation(&self) -> Result<Tessellation> {
        Tessellation::voronoi(self.prototypes.clone(), self.cost.clone())
    }

    /// Re-estimate the mixture weights as the data mass of each cell.
    pub fn estimate_weights(&mut self, data: &Dataset) -> Result<()> {
        let masses = self.tessellation()?.cell_masses(&data.to_measure())?;
        self.weights = masses;
        Ok(())
    }

    /// One Adam step on prototype `j`, descending the mean cost from
    /// generator `j`'s samples to the prototype. The generator is sampled in
    /// evaluation mode and left untouched.
    pub fn prototype_step(&mut self, j: usize, n_samples: usize, seed: u64) -> Result<()> {
        if j >= self.k() {
            return Err(Error::InvalidArgument(format!(
                "prototype index {j} out of range for k = {}",
                self.k()
            )));
        }
        let samples = self.gans[j].generator().sample(n_samples, seed)?;
        let dim = self.dim();
        let mut grad = vec![0.0; dim];
        for x in &samples {
            let g = self.cost.grad_y(x, &self.prototypes[j])?;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        for g in &mut grad {
            *g /= samples.len() as f64;
        }
        self.proto_adams[j].step(&mut self.prototypes[j], &grad)
    }

    /// Draw `n` points with their source cells: cell `j` with probability
    /// `weights[j]`, then a sample of generator `j`.
    pub fn sample_with_cells(&self, n: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = rng_from(seed, &[streams::ENSEMBLE_SAMPLE]);
        let mut counts = vec![0usize; self.k()];
        for _ in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut cell = self.k() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    cell = j;
                    break;
                }
            }
            counts[cell] += 1;
        }
        let mut out = Vec::with_capacity(n);
        for (j, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let cell_seed = derive_seed(seed, &[streams::ENSEMBLE_SAMPLE, j as u64]);
            for point in self.gans[j].generator().sample(count, cell_seed)? {
                out.push((j, point));
            }
        }
        Ok(out)
    }

    /// Draw `n` points from the mixture.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.sample_with_cells(n, seed)?.into_iter().map(|(_, x)| x).collect())
    }
}

/// Header line (newline-terminated) for a history CSV with `dim`-dimensional
/// prototypes.
pub fn history_csv_header(dim: usize) -> String {
    let mut out = String::from("epoch,iteration,cell,critic_loss,generator_loss,penalty");
    for d in 0..dim {
        let _ = write!(out, ",y{d}");
    }
    out.push('\n');
    out
}

/// One history row rendered as a CSV line (newline-terminated), with the same
/// 17-significant-digit rendering as dataset files.
pub fn history_row_csv(r: &HistoryRow) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "{},{},{},{:.16e},{:.16e},{:.16e}",
        r.epoch, r.iteration, r.cell, r.critic_loss, r.generator_loss, r.penalty
    );
    for v in &r.prototype {
        let _ = write!(out, ",{v:.16e}");
    }
    out.push('\n');
    out
}

/// Render training history as CSV (header included).
pub fn history_to_csv(rows: &[HistoryRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.prototype.len());
    let mut out = history_csv_header(dim);
    for r in rows {
        out.push_str(&history_row_csv(r));
    }
    out
}
