//! Assignment of data to prototype cells and batch filtering.
//!
//! A [`Tessellation`] carries prototype points, a ground cost, and optional
//! dual weights. Without dual weights every point goes to its nearest
//! prototype (a Voronoi partition); with them the comparison is
//! `c(x, y_j) - g_j` (a Laguerre partition). Training filters each sampled
//! batch down to the points of one cell, so assignments are computed per
//! batch and never cached — prototypes move between batches.

use crate::error::{Error, Result};
use crate::transport::{CostFunction, DiscreteMeasure, EmpiricalMeasure};

/// An immutable partition of space induced by prototypes. Prototype updates
/// during training construct a fresh value rather than mutating one.
#[derive(Clone, Debug)]
pub struct Tessellation {
    prototypes: Vec<Vec<f64>>,
    cost: CostFunction,
    dual_weights: Option<Vec<f64>>,
}

impl Tessellation {
    /// Nearest-prototype partition (all dual weights equal).
    pub fn voronoi(prototypes: Vec<Vec<f64>>, cost: CostFunction) -> Result<Self> {
        Self::build(prototypes, cost, None)
    }

    /// Partition by `argmin_j c(x, y_j) - g_j`.
    pub fn laguerre(
        prototypes: Vec<Vec<f64>>,
        cost: CostFunction,
        dual_weights: Vec<f64>,
    ) -> Result<Self> {
        Self::build(prototypes, cost, Some(dual_weights))
    }

    /// View a discrete measure's atoms and dual weights as a tessellation.
    pub fn from_measure(nu: &DiscreteMeasure, cost: CostFunction) -> Self {
        // The measure's invariants already guarantee what `build` checks.
        Self {
            prototypes: nu.atoms().to_vec(),
            cost,
            dual_weights: Some(nu.dual_weights().to_vec()),
        }
    }

    fn build(
        prototypes: Vec<Vec<f64>>,
        cost: CostFunction,
        dual_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if prototypes.is_empty() {
            return Err(Error::InvalidArgument("prototypes must be non-empty".into()));
        }
        let dim = prototypes[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("prototypes must have dimension >= 1".into()));
        }
        if prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("prototypes have inconsistent dimensions".into()));
        }
        if prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototypes must be finite".into()));
        }
        if let Some(g) = &dual_weights {
            if g.len() != prototypes.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} dual weights for {} prototypes",
                    g.len(),
                    prototypes.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dual weights must be finite".into()));
            }
        }
        Ok(Self { prototypes, cost, dual_weights })
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

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    pub fn dual_weights(&self) -> Option<&[f64]> {
        self.dual_weights.as_deref()
    }

    /// Cell index of a single point: `argmin_j c(x, y_j) - g_j`, with ties
    /// broken toward the lowest index.
    pub fn voronoi_assign(&self, x: &[f64]) -> Result<usize> {
        let mut best = 0usize;
        let mut best_score = f64::INFINITY;
        for (j, y) in self.prototypes.iter().enumerate() {
            let mut score = self.cost.eval(x, y)?;
            if let Some(g) = &self.dual_weights {
                score -= g[j];
            }
            if score < best_score {
                best = j;
                best_score = score;
            }
        }
        Ok(best)
    }

    /// Cell indices for a whole batch.
    pub fn assign_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<usize>> {
        batch.iter().map(|x| self.voronoi_assign(x)).collect()
    }

    /// The members of `batch` that fall in cell `j`, in their original
    /// order. An empty result is a valid outcome.
    pub fn filter_batch(&self, batch: &[Vec<f64>], j: usize) -> Result<Vec<Vec<f64>>> {
        if j >= self.k() {
            return Err(Error::InvalidArgument(format!(
                "cell index {j} out of range for {} prototypes",
                self.k()
            )));
        }
        let mut kept = Vec::new();
        for x in batch {
            if self.voronoi_assign(x)? == j {
                kept.push(x.clone());
            }
        }
        Ok(kept)
    }

    /// Fraction of data points assigned to each cell.
    pub fn cell_masses(&self, data: &EmpiricalMeasure) -> Result<Vec<f64>> {
        let mut counts = vec![0usize; self.k()];
        for x in data.points() {
            counts[self.voronoi_assign(x)?] += 1;
        }
        let n = data.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngExt;

    use crate::rng::rng_from;

    fn lp2() -> CostFunction {
        CostFunction::lp(2.0).unwrap()
    }

    fn two_prototypes() -> Tessellation {
        Tessellation::voronoi(vec![vec![-0.5, 0.0], vec![0.5, 0.0]], lp2()).unwrap()
    }

    #[test]
    fn nearer_prototype_wins() {
        assert_eq!(two_prototypes().voronoi_assign(&[0.4, 0.0]).unwrap(), 1);
        assert_eq!(two_prototypes().voronoi_assign(&[-0.1, 0.3]).unwrap(), 0);
    }

    #[test]
    fn exact_midpoint_goes_to_lowest_index() {
        assert_eq!(two_prototypes().voronoi_assign(&[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn assignment_matches_exhaustive_scan() {
        let mut rng = rng_from(7, &[0xB0]);
        let prototypes: Vec<Vec<f64>> = (0..4)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let t = Tessellation::voronoi(prototypes.clone(), lp2()).unwrap();
        for _ in 0..100 {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            // Literal double loop, independent of the library path.
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, y) in prototypes.iter().enumerate() {
                let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            assert_eq!(t.voronoi_assign(&x).unwrap(), best);
        }
    }

    #[test]
    fn dual_weights_shift_the_boundary() {
        // The midpoint belongs to cell 0 under Voronoi, but a large enough
        // dual weight on cell 1 claims it.
        let t = Tessellation::laguerre(
            vec![vec![-0.5, 0.0], vec![0.5, 0.0]],
            lp2(),
            vec![0.0, 0.1],
        )
        .unwrap();
        assert_eq!(t.voronoi_assign(&[0.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn filter_keeps_in_cell_points_unchanged() {
        let t = two_prototypes();
        let batch = vec![vec![0.4, 0.0], vec![0.6, -0.2], vec![0.5, 0.5]];
        assert_eq!(t.filter_batch(&batch, 1).unwrap(), batch);
        assert!(t.filter_batch(&batch, 0).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_cell_rejected() {
        let t = two_prototypes();
        assert!(t.filter_batch(&[vec![0.0, 0.0]], 2).is_err());
    }

    #[test]
    fn single_cell_mass_is_exactly_one() {
        let t = Tessellation::voronoi(vec![vec![0.0, 0.0]], lp2()).unwrap();
        let data =
            EmpiricalMeasure::new(vec![vec![1.0, 0.0], vec![-2.0, 0.4], vec![0.0, 9.0]]).unwrap();
        assert_eq!(t.cell_masses(&data).unwrap(), vec![1.0]);
    }

    #[test]
    fn symmetric_clusters_split_mass_evenly() {
        let mut rng = rng_from(21, &[0xB1]);
        let mut points = Vec::new();
        for _ in 0..64 {
            let dx = rng.random_range(-0.2..0.2);
            let dy = rng.random_range(-0.2..0.2);
            points.push(vec![-0.5 + dx, dy]);
            points.push(vec![0.5 + dx, dy]);
        }
        let data = EmpiricalMeasure::new(points).unwrap();
        let masses = two_prototypes().cell_masses(&data).unwrap();
        // Mirror pairs land in mirror cells, and 128 points divide exactly.
        assert_eq!(masses, vec![0.5, 0.5]);
    }

    #[test]
    fn masses_sum_close_to_one_for_odd_counts() {
        // 3 points cannot produce masses that are dyadic rationals, so the
        // sum is only guaranteed to machine precision.
        let t = two_prototypes();
        let data = EmpiricalMeasure::new(vec![vec![-0.5, 0.0], vec![0.5, 0.0], vec![0.6, 0.0]])
            .unwrap();
        let masses = t.cell_masses(&data).unwrap();
        let total: f64 = masses.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn moving_prototype_onto_point_claims_it() {
        let x = vec![0.3, -0.7];
        let prototypes = vec![vec![-0.5, 0.0], x.clone(), vec![0.5, 0.0]];
        let t = Tessellation::voronoi(prototypes, lp2()).unwrap();
        assert_eq!(t.voronoi_assign(&x).unwrap(), 1);
    }

    #[test]
    fn measure_view_uses_its_dual_weights() {
        let mut nu =
            DiscreteMeasure::uniform(vec![vec![-0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        nu.set_dual_weights(vec![0.0, 0.1]).unwrap();
        let t = Tessellation::from_measure(&nu, lp2());
        assert_eq!(t.voronoi_assign(&[0.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn nonfinite_prototypes_rejected() {
        assert!(Tessellation::voronoi(vec![vec![f64::NAN, 0.0]], lp2()).is_err());
        assert!(Tessellation::laguerre(vec![vec![0.0]], lp2(), vec![f64::INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn filtered_subbatches_partition_the_batch(
            raw in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..80),
            protos in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6),
        ) {
            let batch: Vec<Vec<f64>> = raw.iter().map(|(a, b)| vec![*a, *b]).collect();
            let prototypes: Vec<Vec<f64>> = protos.iter().map(|(a, b)| vec![*a, *b]).collect();
            let t = Tessellation::voronoi(prototypes, lp2()).unwrap();

            let mut recombined: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut total = 0usize;
            for j in 0..t.k() {
                let sub = t.filter_batch(&batch, j).unwrap();
                total += sub.len();
                for x in sub {
                    recombined.push((j, x));
                }
            }
            // Disjoint and exhaustive: sizes add up and every batch member
            // appears exactly once, in its assigned cell.
            prop_assert_eq!(total, batch.len());
            let mut seen = vec![0usize; batch.len()];
            for (j, x) in &recombined {
                let idx = batch
                    .iter()
                    .enumerate()
                    .position(|(i, b)| seen[i] == 0 && b == x)
                    .expect("filtered point not found in batch");
                seen[idx] = 1;
                prop_assert_eq!(t.voronoi_assign(x).unwrap(), *j);
            }
            prop_assert!(seen.iter().all(|s| *s == 1));
        }
    }
}
