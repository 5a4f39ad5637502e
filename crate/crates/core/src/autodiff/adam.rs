//! Adam optimizer over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First/second moment state for one parameter vector.
///
/// The same struct drives network weights and transport prototypes; the
/// parameter layout is whatever flat order the owner uses, as long as it is
/// consistent between steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// State for `len` parameters with learning rate `alpha` and the usual
    /// defaults beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(len: usize, alpha: f64) -> Self {
        Self {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Forget all accumulated moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    /// One descent step (`params -= update`). Rejects non-finite gradients
    /// without touching the moments, so a poisoned training step surfaces as
    /// an error instead of corrupting the state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state of {} parameters used with params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient component {pos} is {}; optimizer state left unchanged",
                grads[pos]
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
