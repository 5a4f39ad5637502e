//! Discrete and empirical probability measures on `R^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for checking that explicit weights sum to one.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A finitely supported measure `sum_j w_j delta(y_j)` with an attached
/// vector of dual weights (one per atom) used by the transport solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dual_weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Build a measure from atoms and explicit weights. Weights must be
    /// non-negative and sum to one (within 1e-9). Dual weights start at zero.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("atoms must be non-empty".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("atoms must have dimension >= 1".into()));
        }
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::ShapeMismatch("atoms have inconsistent dimensions".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1 within {WEIGHT_SUM_TOL}, got {total}"
            )));
        }
        let k = atoms.len();
        Ok(Self { atoms, weights, dual_weights: vec![0.0; k] })
    }

    /// Uniform weights `1/k` on the given atoms.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let k = atoms.len();
        if k == 0 {
            return Err(Error::InvalidArgument("atoms must be non-empty".into()));
        }
        Self::new(atoms, vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j]
    }

    /// Replace atom `j`, keeping its weight and dual weight.
    pub fn set_atom(&mut self, j: usize, atom: Vec<f64>) -> Result<()> {
        if atom.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "atom of dimension {} in a measure of dimension {}",
                atom.len(),
                self.dim()
            )));
        }
        self.atoms[j] = atom;
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Overwrite the weights (same validation as construction).
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} atoms",
                weights.len(),
                self.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1 within {WEIGHT_SUM_TOL}, got {total}"
            )));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    pub fn set_dual_weights(&mut self, dual_weights: Vec<f64>) -> Result<()> {
        if dual_weights.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} dual weights for {} atoms",
                dual_weights.len(),
                self.len()
            )));
        }
        if dual_weights.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("dual weights must be finite".into()));
        }
        self.dual_weights = dual_weights;
        Ok(())
    }
}

/// A uniform empirical measure `1/N sum_i delta(x_i)` over sample points,
/// optionally carrying per-point labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
    labels: Vec<Option<u32>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::with_labels(points, vec![None; n])
    }

    pub fn with_labels(points: Vec<Vec<f64>>, labels: Vec<Option<u32>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("points must be non-empty".into()));
        }
        if points.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("points must have dimension >= 1".into()));
        }
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("points have inconsistent dimensions".into()));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    /// Weight of every point (`1/N`).
    pub fn point_weight(&self) -> f64 {
        1.0 / self.len() as f64
    }
}
