//! The k-generators reduction: prototypes alone, no networks.
//!
//! With the generators stripped away, joint training collapses to alternating
//! two full-batch moves: place each prototype at the best representative of
//! its current cell, then reassign every point to its nearest prototype. Under
//! the mean rule with squared Euclidean cost this is exactly Lloyd's k-means;
//! the medoid rule keeps prototypes on data points and works for any ground
//! cost. Each cell's points stand in for that cell's generator, so "sampling a
//! component" draws uniformly from the cell.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams};
use crate::transport::CostFunction;

/// How a cell's prototype is recomputed from the cell's members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// The member minimizing the total cost to the other members (first such
    /// member in data order when tied). Always lands on a data point.
    Medoid,
    /// The coordinate mean of the members. Minimizes the cell cost only for
    /// the squared Euclidean ground cost.
    Mean,
}

/// Result of a k-generators run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KGenerators {
    /// Final prototypes.
    pub prototypes: Vec<Vec<f64>>,
    /// Final cell index of every data point.
    pub assignment: Vec<usize>,
    /// Prototype sets over time; `trajectory[0]` is the initialization and
    /// each later entry follows one update-and-reassign round.
    pub trajectory: Vec<Vec<Vec<f64>>>,
    /// Mean cost of the data to its assigned prototypes, recorded alongside
    /// each trajectory entry.
    pub objectives: Vec<f64>,
    cells: Vec<Vec<Vec<f64>>>,
}

impl KGenerators {
    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    /// Number of data points in each final cell.
    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    /// Members of one final cell, in data order.
    pub fn cell_members(&self, j: usize) -> Result<&[Vec<f64>]> {
        self.cells
            .get(j)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("cell {j} out of range")))
    }

    /// Draw `n` points uniformly (with replacement) from cell `j`'s members;
    /// this is the reduction's stand-in for sampling component `j`.
    pub fn sample_cell(&self, j: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let members = self.cell_members(j)?;
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("cell {j} is empty")));
        }
        let mut rng = rng_from(seed, &[streams::ENSEMBLE_SAMPLE, j as u64]);
        Ok((0..n).map(|_| members[rng.random_range(0..members.len())].clone()).collect())
    }

    /// Draw `n` points with their source cells from the mixture weighted by
    /// final cell mass, mirroring the parametric ensemble's sampler.
    pub fn sample_with_cells(&self, n: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let total = self.assignment.len() as f64;
        let weights: Vec<f64> = self.cell_sizes().iter().map(|&s| s as f64 / total).collect();
        let mut rng = rng_from(seed, &[streams::ENSEMBLE_SAMPLE]);
        let mut counts = vec![0usize; self.k()];
        for _ in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut cell = self.k() - 1;
            for (j, w) in weights.iter().enumerate() {
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
            for point in self.sample_cell(j, count, seed)? {
                out.push((j, point));
            }
        }
        Ok(out)
    }
}

fn nearest_prototype(
    point: &[f64],
    prototypes: &[Vec<f64>],
    cost: &CostFunction,
) -> Result<usize> {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (j, y) in prototypes.iter().enumerate() {
        let c = cost.eval(point, y)?;
        if c < best_cost {
            best_cost = c;
            best = j;
        }
    }
    Ok(best)
}

fn assign_all(
    points: &[Vec<f64>],
    prototypes: &[Vec<f64>],
    cost: &CostFunction,
) -> Result<Vec<usize>> {
    points.iter().map(|p| nearest_prototype(p, prototypes, cost)).collect()
}

fn objective(
    points: &[Vec<f64>],
    prototypes: &[Vec<f64>],
    assignment: &[usize],
    cost: &CostFunction,
) -> Result<f64> {
    let mut total = 0.0;
    for (p, &j) in points.iter().zip(assignment) {
        total += cost.eval(p, &prototypes[j])?;
    }
    Ok(total / points.len() as f64)
}

fn medoid(members: &[&Vec<f64>], cost: &CostFunction) -> Result<Vec<f64>> {
    let mut best = 0;
    let mut best_total = f64::INFINITY;
    for (i, candidate) in members.iter().enumerate() {
        let mut total = 0.0;
        for other in members {
            total += cost.eval(other, candidate)?;
        }
        if total < best_total {
            best_total = total;
            best = i;
        }
    }
    Ok(members[best].clone())
}

fn mean(members: &[&Vec<f64>]) -> Vec<f64> {
    let dim = members[0].len();
    let mut out = vec![0.0; dim];
    for m in members {
        for (acc, v) in out.iter_mut().zip(m.iter()) {
            *acc += v;
        }
    }
    for v in &mut out {
        *v /= members.len() as f64;
    }
    out
}

/// Run the reduction from explicit starting prototypes.
///
/// Every round recomputes each prototype from its current members under
/// `rule` (an empty cell is reseeded onto a random data point instead), then
/// reassigns all points. `seed` only feeds empty-cell reseeds, so runs
/// without starved cells are seed-independent.
pub fn run_kgenerators_from(
    data: &Dataset,
    init: Vec<Vec<f64>>,
    cost: CostFunction,
    rounds: usize,
    rule: UpdateRule,
    seed: u64,
) -> Result<KGenerators> {
    let points = data.points();
    let k = init.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if init.iter().any(|p| p.len() != data.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "prototypes must be {}-dimensional like the data",
            data.dim()
        )));
    }

    let mut prototypes = init;
    let mut assignment = assign_all(points, &prototypes, &cost)?;
    let mut trajectory = vec![prototypes.clone()];
    let mut objectives = vec![objective(points, &prototypes, &assignment, &cost)?];

    for round in 0..rounds {
        for (j, proto) in prototypes.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                points.iter().zip(&assignment).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                let mut rng =
                    rng_from(seed, &[streams::EMPTY_RESEED, round as u64, j as u64]);
                *proto = points[rng.random_range(0..points.len())].clone();
                continue;
            }
            *proto = match rule {
                UpdateRule::Medoid => medoid(&members, &cost)?,
                UpdateRule::Mean => mean(&members),
            };
        }
        assignment = assign_all(points, &prototypes, &cost)?;
        trajectory.push(prototypes.clone());
        objectives.push(objective(points, &prototypes, &assignment, &cost)?);
    }

    let mut cells = vec![Vec::new(); k];
    for (p, &j) in points.iter().zip(&assignment) {
        cells[j].push(p.clone());
    }
    Ok(KGenerators { prototypes, assignment, trajectory, objectives, cells })
}

/// [`run_kgenerators`] with an explicit update rule but the default
/// initialization (`k` distinct random data points).
pub fn run_kgenerators_with_rule(
    data: &Dataset,
    k: usize,
    cost: CostFunction,
    rounds: usize,
    seed: u64,
    rule: UpdateRule,
) -> Result<KGenerators> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {k} distinct starting points from {} data points",
            data.len()
        )));
    }
    let mut rng = rng_from(seed, &[streams::KGEN_INIT]);
    let init: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, data.len(), k)
        .iter()
        .map(|i| data.points()[i].clone())
        .collect();
    run_kgenerators_from(data, init, cost, rounds, rule, seed)
}

/// Run the reduction with the default setup: `k` distinct random data points
/// as starting prototypes and the medoid rule.
pub fn run_kgenerators(
    data: &Dataset,
    k: usize,
    cost: CostFunction,
    rounds: usize,
    seed: u64,
) -> Result<KGenerators> {
    run_kgenerators_with_rule(data, k, cost, rounds, seed, UpdateRule::Medoid)
}
