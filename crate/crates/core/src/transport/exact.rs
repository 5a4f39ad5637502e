//! Exact transport cost for tiny instances, by exhaustive search.
//!
//! When the source is a uniform empirical measure on `N` points and every
//! target weight is a multiple of `1/N`, the transportation linear program
//! has integer supplies and demands after scaling by `N`, so some optimal
//! plan moves each point wholly to a single atom, with atom `j` receiving
//! exactly `N * w_j` points. Enumerating those exact-count assignments and
//! taking the cheapest therefore yields the true optimum. This is only
//! feasible for very small instances and exists to validate the iterative
//! dual solver.

use crate::error::{Error, Result};
use crate::transport::cost::CostFunction;
use crate::transport::measure::{DiscreteMeasure, EmpiricalMeasure};

/// Enumeration limits; beyond these the search space is too large for an
/// exhaustive oracle.
pub const EXACT_MAX_POINTS: usize = 10;
pub const EXACT_MAX_ATOMS: usize = 5;

/// Tolerance for `N * w_j` being an integer.
const COUNT_TOL: f64 = 1e-6;

/// An exact optimal plan for a tiny instance.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    /// Minimal transport cost `1/N sum_i c(x_i, y_assignment[i])`.
    pub cost: f64,
    /// Atom index receiving each point under the cheapest exact-count plan.
    pub assignment: Vec<usize>,
}

/// Solve the transport problem exactly by enumerating every assignment that
/// sends `N * w_j` points to atom `j`. Requires `N <= 10`, `k <= 5`, and
/// every `w_j` to be a multiple of `1/N`.
pub fn ot_exact_small(
    mu: &EmpiricalMeasure,
    nu: &DiscreteMeasure,
    cost: &CostFunction,
) -> Result<ExactSolution> {
    let n = mu.len();
    let k = nu.len();
    if n > EXACT_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "exact solver handles at most {EXACT_MAX_POINTS} points, got {n}"
        )));
    }
    if k > EXACT_MAX_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "exact solver handles at most {EXACT_MAX_ATOMS} atoms, got {k}"
        )));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch(format!(
            "source dimension {} vs target dimension {}",
            mu.dim(),
            nu.dim()
        )));
    }

    // Target point counts per atom.
    let mut counts = Vec::with_capacity(k);
    for (j, w) in nu.weights().iter().enumerate() {
        let scaled = w * n as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > COUNT_TOL {
            return Err(Error::InvalidArgument(format!(
                "weight of atom {j} is {w}, not a multiple of 1/{n}"
            )));
        }
        counts.push(rounded as usize);
    }
    let total: usize = counts.iter().sum();
    if total != n {
        return Err(Error::InvalidArgument(format!(
            "atom point counts sum to {total}, expected {n}"
        )));
    }

    // Pairwise costs, computed once.
    let mut pair_cost = vec![0.0; n * k];
    for (i, x) in mu.points().iter().enumerate() {
        for (j, y) in nu.atoms().iter().enumerate() {
            pair_cost[i * k + j] = cost.eval(x, y)?;
        }
    }

    // Depth-first search over points with capacity and cost pruning.
    struct Search<'a> {
        n: usize,
        k: usize,
        pair_cost: &'a [f64],
        remaining: Vec<usize>,
        assignment: Vec<usize>,
        best_total: f64,
        best_assignment: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, running: f64) {
            if running >= self.best_total {
                return;
            }
            if i == self.n {
                self.best_total = running;
                self.best_assignment.copy_from_slice(&self.assignment);
                return;
            }
            for j in 0..self.k {
                if self.remaining[j] == 0 {
                    continue;
                }
                self.remaining[j] -= 1;
                self.assignment[i] = j;
                let step = self.pair_cost[i * self.k + j];
                self.go(i + 1, running + step);
                self.remaining[j] += 1;
            }
        }
    }

    let mut search = Search {
        n,
        k,
        pair_cost: &pair_cost,
        remaining: counts,
        assignment: vec![0usize; n],
        best_total: f64::INFINITY,
        best_assignment: vec![0usize; n],
    };
    search.go(0, 0.0);

    Ok(ExactSolution { cost: search.best_total / n as f64, assignment: search.best_assignment })
}
