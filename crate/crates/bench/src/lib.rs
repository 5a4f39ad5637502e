//! Shared fixtures for the criterion benches.

use kgans_core::data::{make_toy, Dataset, ToySpec};
use kgans_core::{CostFunction, DiscreteMeasure, EmpiricalMeasure};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lp2() -> CostFunction {
    CostFunction::lp(2.0).expect("p = 2 is valid")
}

pub fn toy_dataset(n: usize) -> Dataset {
    make_toy(&ToySpec::td2(n, 0).expect("td2 is valid")).expect("generation succeeds")
}

/// A random semi-discrete instance: `n` uniform points, `k` uniform atoms,
/// uniform target weights.
pub fn random_instance(n: usize, k: usize, seed: u64) -> (EmpiricalMeasure, DiscreteMeasure) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    };
    let points: Vec<Vec<f64>> = (0..n).map(|_| point(&mut rng)).collect();
    let atoms: Vec<Vec<f64>> = (0..k).map(|_| point(&mut rng)).collect();
    let mu = EmpiricalMeasure::new(points).expect("points are valid");
    let nu = DiscreteMeasure::uniform(atoms).expect("atoms are valid");
    (mu, nu)
}
