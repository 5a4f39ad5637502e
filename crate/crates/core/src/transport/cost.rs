//! Ground cost functions between points.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Pluggable feature embedding used by [`CostFunction::feature_lp`].
pub type FeatureMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Optional labeling of points for the semi-supervised cost. Returns `None`
/// for unlabeled points.
pub type Labeler = Arc<dyn Fn(&[f64]) -> Option<u32> + Send + Sync>;

/// Cost of the semi-supervised scaling when both labels are present and
/// equal / different / when either point is unlabeled.
const THETA_SAME: f64 = 0.1;
const THETA_DIFF: f64 = 10.0;
const THETA_UNLABELED: f64 = 1.0;

/// Step used for numeric prototype gradients of feature costs, whose feature
/// map is a black box without a Jacobian.
const FEATURE_GRAD_STEP: f64 = 1e-6;

#[derive(Clone)]
pub enum CostFunction {
    /// `sum_d |x_d - y_d|^p` (the p-th power of the l_p norm).
    Lp { p: f64 },
    /// `sum_m |f(x)_m - f(y)_m|^p` for a feature embedding `f`.
    FeatureLp { map: FeatureMap, p: f64 },
    /// `theta(label(x), label(y)) * base(x, y)`.
    SemiSupervised {
        base: Box<CostFunction>,
        labeler: Labeler,
        theta_same: f64,
        theta_diff: f64,
        theta_unlabeled: f64,
    },
}

impl fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lp { p } => write!(f, "Lp({p})"),
            Self::FeatureLp { p, .. } => write!(f, "FeatureLp(p={p})"),
            Self::SemiSupervised { base, theta_same, theta_diff, theta_unlabeled, .. } => write!(
                f,
                "SemiSupervised(base={base:?}, theta={theta_same}/{theta_diff}/{theta_unlabeled})"
            ),
        }
    }
}

fn validate_p(p: f64) -> Result<()> {
    if !p.is_finite() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("p must be a finite real >= 1, got {p}")));
    }
    Ok(())
}

fn validate_theta(name: &str, theta: f64) -> Result<()> {
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be positive, got {theta}")));
    }
    Ok(())
}

fn lp_power(diff: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        diff.iter().map(|d| d * d).sum()
    } else if p == 1.0 {
        diff.iter().map(|d| d.abs()).sum()
    } else {
        diff.iter().map(|d| d.abs().powf(p)).sum()
    }
}

impl CostFunction {
    pub fn lp(p: f64) -> Result<Self> {
        validate_p(p)?;
        Ok(Self::Lp { p })
    }

    pub fn feature_lp(map: FeatureMap, p: f64) -> Result<Self> {
        validate_p(p)?;
        Ok(Self::FeatureLp { map, p })
    }

    /// Semi-supervised scaling with the default factors 0.1 (same label),
    /// 10 (different labels), 1 (either point unlabeled).
    pub fn semi_supervised(base: CostFunction, labeler: Labeler) -> Self {
        Self::SemiSupervised {
            base: Box::new(base),
            labeler,
            theta_same: THETA_SAME,
            theta_diff: THETA_DIFF,
            theta_unlabeled: THETA_UNLABELED,
        }
    }

    pub fn semi_supervised_with(
        base: CostFunction,
        labeler: Labeler,
        theta_same: f64,
        theta_diff: f64,
        theta_unlabeled: f64,
    ) -> Result<Self> {
        validate_theta("theta_same", theta_same)?;
        validate_theta("theta_diff", theta_diff)?;
        validate_theta("theta_unlabeled", theta_unlabeled)?;
        Ok(Self::SemiSupervised {
            base: Box::new(base),
            labeler,
            theta_same,
            theta_diff,
            theta_unlabeled,
        })
    }

    /// Evaluate the cost `c(x, y)`; always non-negative and zero at `x == y`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "cost of points with dimensions {} and {}",
                x.len(),
                y.len()
            )));
        }
        match self {
            Self::Lp { p } => {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                Ok(lp_power(&diff, *p))
            }
            Self::FeatureLp { map, p } => {
                let fx = map(x);
                let fy = map(y);
                if fx.len() != fy.len() {
                    return Err(Error::InvalidArgument(format!(
                        "feature map produced embeddings of unequal lengths {} and {}",
                        fx.len(),
                        fy.len()
                    )));
                }
                let diff: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
                Ok(lp_power(&diff, *p))
            }
            Self::SemiSupervised { base, .. } => Ok(self.theta(x, y) * base.eval(x, y)?),
        }
    }

    /// The label-dependent scale factor; 1 for non-semi-supervised costs.
    pub fn theta(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::SemiSupervised { labeler, theta_same, theta_diff, theta_unlabeled, .. } => {
                match (labeler(x), labeler(y)) {
                    (Some(a), Some(b)) if a == b => *theta_same,
                    (Some(_), Some(_)) => *theta_diff,
                    _ => *theta_unlabeled,
                }
            }
            _ => 1.0,
        }
    }

    /// Gradient of `c(x, y)` with respect to `y`.
    ///
    /// Analytic for the `l_p` family (with the zero subgradient at kinks,
    /// e.g. `p = 1` at coordinates where `x_d == y_d`). Feature costs fall
    /// back to central finite differences because the feature map exposes no
    /// Jacobian. The semi-supervised scale is piecewise constant in `y` and
    /// is treated as a constant factor.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "cost gradient of points with dimensions {} and {}",
                x.len(),
                y.len()
            )));
        }
        match self {
            Self::Lp { p } => Ok(x
                .iter()
                .zip(y)
                .map(|(&xd, &yd)| {
                    let delta = xd - yd; // d/dy |x - y|^p = p |delta|^(p-1) sign(y - x)
                    let sign = if delta > 0.0 {
                        -1.0
                    } else if delta < 0.0 {
                        1.0
                    } else {
                        return 0.0;
                    };
                    sign * p * delta.abs().powf(p - 1.0)
                })
                .collect()),
            Self::FeatureLp { .. } => {
                let mut grad = vec![0.0; y.len()];
                let mut probe = y.to_vec();
                for d in 0..y.len() {
                    let h = FEATURE_GRAD_STEP;
                    probe[d] = y[d] + h;
                    let up = self.eval(x, &probe)?;
                    probe[d] = y[d] - h;
                    let down = self.eval(x, &probe)?;
                    probe[d] = y[d];
                    grad[d] = (up - down) / (2.0 * h);
                }
                Ok(grad)
            }
            Self::SemiSupervised { base, .. } => {
                let scale = self.theta(x, y);
                let mut grad = base.grad_y(x, y)?;
                for g in &mut grad {
                    *g *= scale;
                }
                Ok(grad)
            }
        }
    }
}
