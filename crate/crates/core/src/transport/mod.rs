//! Semi-discrete optimal transport: ground costs, measures, the dual
//! solver, and an exhaustive exact solver for validating it.

mod cost;
mod dual;
mod exact;
mod measure;

pub use cost::{CostFunction, FeatureMap, Labeler};
pub use dual::{
    best_atom, c_transform, cell_masses, dual_gradient, dual_objective, laguerre_assign,
    solve_dual, DualSolution, DEFAULT_DUAL_MAX_ITERS, DEFAULT_DUAL_STEP, DEFAULT_DUAL_TOL,
};
pub use exact::{ot_exact_small, ExactSolution, EXACT_MAX_ATOMS, EXACT_MAX_POINTS};
pub use measure::{DiscreteMeasure, EmpiricalMeasure};
