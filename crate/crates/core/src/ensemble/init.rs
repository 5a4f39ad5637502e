//! Prototype initialization strategies.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams};

/// Lloyd's algorithm stops when no center moves more than this.
const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Lloyd's k-means on the data to convergence.
    KMeans,
    /// Independent uniform draws from `[-1, 1]^d`.
    UniformRandom,
}

/// Produce `k` starting prototypes from the data.
pub fn init_prototypes(
    data: &Dataset,
    k: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the dataset size {}",
            data.len()
        )));
    }
    let mut rng = rng_from(seed, &[streams::PROTO_INIT]);
    match strategy {
        InitStrategy::UniformRandom => {
            let d = data.dim();
            Ok((0..k)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect())
        }
        InitStrategy::KMeans => {
            // Start from k distinct data points.
            let mut centers: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, data.len(), k)
                .into_iter()
                .map(|i| data.points()[i].clone())
                .collect();
            for _ in 0..KMEANS_MAX_ITERS {
                let assignment = nearest_center(data.points(), &centers);
                let mut sums = vec![vec![0.0; data.dim()]; k];
                let mut counts = vec![0usize; k];
                for (x, &j) in data.points().iter().zip(&assignment) {
                    counts[j] += 1;
                    for (s, v) in sums[j].iter_mut().zip(x) {
                        *s += v;
                    }
                }
                let mut moved = 0.0f64;
                for j in 0..k {
                    let new_center: Vec<f64> = if counts[j] == 0 {
                        let i = rng.random_range(0..data.len());
                        data.points()[i].clone()
                    } else {
                        sums[j].iter().map(|s| s / counts[j] as f64).collect()
                    };
                    let shift = new_center
                        .iter()
                        .zip(&centers[j])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    moved = moved.max(shift);
                    centers[j] = new_center;
                }
                if moved <= KMEANS_TOL {
                    break;
                }
            }
            Ok(centers)
        }
    }
}

/// Index of the squared-Euclidean-nearest center per point, ties to the
/// lowest index.
pub(crate) fn nearest_center(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|x| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}
