//! Fully connected networks assembled from tape operations.
//!
//! A [`Mlp`] owns its parameters as plain tensors. Every forward pass records
//! fresh leaves on the caller's tape; [`Mlp::flat_gradient`] then collects the
//! leaf gradients back into the canonical flat parameter order, summing over
//! as many forward passes as the loss used (a critic scores several batches
//! per step, for example).

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Gradients, NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    /// `max(x, slope * x)` with the configured negative-side slope.
    LeakyRelu(f64),
    Sigmoid,
    Linear,
}

/// Whether a forward pass normalizes with batch statistics (and refreshes the
/// running ones) or uses the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature affine normalization with tracked running statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Fraction of the old running value kept per refresh.
    pub momentum: f64,
}

impl BatchNorm {
    fn identity(units: usize) -> Self {
        Self {
            scale: Tensor::new(vec![units], vec![1.0; units]).expect("unit scale"),
            shift: Tensor::new(vec![units], vec![0.0; units]).expect("zero shift"),
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_in, units]`.
    pub weight: Tensor,
    /// `[units]`.
    pub bias: Tensor,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
}

/// Specification of one layer for [`Mlp::new`].
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub units: usize,
    pub batch_norm: bool,
    pub activation: Activation,
}

/// Result of recording one forward pass on a tape.
pub struct ForwardPass {
    pub output: NodeId,
    /// Parameter leaves in flat order; used for gradient extraction.
    param_leaves: Vec<NodeId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

enum Stats {
    /// Batch statistics, refreshing running ones.
    TrainUpdate,
    /// Batch statistics without touching the stored running values.
    TrainFrozen,
    /// Stored running statistics.
    Running,
}

impl Mlp {
    /// Initialize with uniform(-a, a) weights, a = sqrt(6 / (fan_in +
    /// fan_out)), zero biases, and identity batch-norm parameters.
    pub fn new(input_dim: usize, specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if specs.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            if spec.units == 0 {
                return Err(Error::InvalidArgument("layer units must be positive".into()));
            }
            let bound = (6.0 / (fan_in + spec.units) as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * spec.units)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_in, spec.units], weight)?,
                bias: Tensor::zeros(vec![spec.units])?,
                batch_norm: spec.batch_norm.then(|| BatchNorm::identity(spec.units)),
                activation: spec.activation,
            });
            fan_in = spec.units;
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated non-empty").weight.cols()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Count of trainable parameters (running statistics are buffers, not
    /// parameters, and are excluded).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |bn| bn.scale.len() + bn.shift.len())
            })
            .sum()
    }

    /// Trainable parameters in canonical flat order: per layer weight, bias,
    /// then batch-norm scale and shift when present.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.weight.values());
            flat.extend_from_slice(layer.bias.values());
            if let Some(bn) = &layer.batch_norm {
                flat.extend_from_slice(bn.scale.values());
                flat.extend_from_slice(bn.shift.values());
            }
        }
        flat
    }

    /// Write a flat vector (same order as [`Mlp::flat_params`]) back into the
    /// parameter tensors.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector of {} values for a network with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        let copy = |tensor: &mut Tensor, offset: &mut usize| {
            let len = tensor.len();
            tensor.values_mut().copy_from_slice(&flat[*offset..*offset + len]);
            *offset += len;
        };
        for layer in &mut self.layers {
            copy(&mut layer.weight, &mut offset);
            copy(&mut layer.bias, &mut offset);
            if let Some(bn) = &mut layer.batch_norm {
                copy(&mut bn.scale, &mut offset);
                copy(&mut bn.shift, &mut offset);
            }
        }
        Ok(())
    }

    /// Record a forward pass. `Train` normalizes with batch statistics and
    /// refreshes the running ones; `Eval` uses the stored running statistics
    /// and never mutates.
    pub fn forward(&mut self, tape: &mut Tape, input: NodeId, mode: Mode) -> Result<ForwardPass> {
        match mode {
            Mode::Train => {
                let (pass, stats) = self.forward_impl(tape, input, Stats::TrainUpdate)?;
                for (idx, mean, var) in stats {
                    let bn = self.layers[idx].batch_norm.as_mut().expect("stat for bn layer");
                    let keep = bn.momentum;
                    for (r, m) in bn.running_mean.iter_mut().zip(&mean) {
                        *r = keep * *r + (1.0 - keep) * m;
                    }
                    for (r, v) in bn.running_var.iter_mut().zip(&var) {
                        *r = keep * *r + (1.0 - keep) * v;
                    }
                }
                Ok(pass)
            }
            Mode::Eval => self.forward_eval(tape, input),
        }
    }

    /// Evaluation-mode forward (running statistics) without requiring `&mut`.
    pub fn forward_eval(&self, tape: &mut Tape, input: NodeId) -> Result<ForwardPass> {
        Ok(self.forward_impl(tape, input, Stats::Running)?.0)
    }

    /// Training-mode statistics without refreshing the running ones. Used
    /// when another network's update needs fresh samples from this one: the
    /// math matches `Train`, but this network's stored state stays bitwise
    /// untouched.
    pub fn forward_frozen(&self, tape: &mut Tape, input: NodeId) -> Result<ForwardPass> {
        Ok(self.forward_impl(tape, input, Stats::TrainFrozen)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        tape: &mut Tape,
        input: NodeId,
        stats: Stats,
    ) -> Result<(ForwardPass, Vec<(usize, Vec<f64>, Vec<f64>)>)> {
        let in_shape = tape.value(input).shape();
        if in_shape.len() != 2 || in_shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "network expects [n, {}] input, got {in_shape:?}",
                self.input_dim
            )));
        }
        let mut param_leaves = Vec::new();
        let mut batch_stats = Vec::new();
        let mut x = input;
        for (idx, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            param_leaves.push(w);
            param_leaves.push(b);
            x = tape.matmul(x, w)?;
            x = tape.add_bias(x, b)?;
            if let Some(bn) = &layer.batch_norm {
                let s = tape.leaf(bn.scale.clone());
                let t = tape.leaf(bn.shift.clone());
                param_leaves.push(s);
                param_leaves.push(t);
                x = match stats {
                    Stats::TrainUpdate => {
                        let (node, mean, var) = tape.batch_norm_batch(x, s, t, BN_EPS)?;
                        batch_stats.push((idx, mean, var));
                        node
                    }
                    Stats::TrainFrozen => tape.batch_norm_batch(x, s, t, BN_EPS)?.0,
                    Stats::Running => tape.batch_norm_fixed(
                        x,
                        s,
                        t,
                        bn.running_mean.clone(),
                        bn.running_var.clone(),
                        BN_EPS,
                    )?,
                };
            }
            x = match layer.activation {
                Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
                Activation::Sigmoid => tape.sigmoid(x),
                Activation::Linear => x,
            };
        }
        Ok((ForwardPass { output: x, param_leaves }, batch_stats))
    }

    /// Collect parameter gradients accumulated on `tape` into flat order,
    /// summing the contributions of every pass in `passes`. Parameters the
    /// loss never reached get zero.
    pub fn flat_gradient(
        &self,
        tape: &Tape,
        grads: &Gradients,
        passes: &[&ForwardPass],
    ) -> Result<Vec<f64>> {
        let count = self.param_count();
        let mut total = vec![0.0; count];
        for pass in passes {
            let mut flat = Vec::with_capacity(count);
            for &leaf in &pass.param_leaves {
                let len = tape.value(leaf).len();
                grads.extend_flat(leaf, len, &mut flat);
            }
            if flat.len() != count {
                return Err(Error::ShapeMismatch(format!(
                    "forward pass recorded {} gradient values for {} parameters \
                     (pass from a different network?)",
                    flat.len(),
                    count
                )));
            }
            for (t, f) in total.iter_mut().zip(&flat) {
                *t += f;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn spec(units: usize, batch_norm: bool, activation: Activation) -> LayerSpec {
        LayerSpec { units, batch_norm, activation }
    }

    /// Straight-line reimplementation of the forward pass used as an oracle;
    /// shares nothing with the tape code.
    fn oracle_forward(mlp: &Mlp, batch: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = batch.to_vec();
        for layer in mlp.layers() {
            let (fan_in, units) = (layer.weight.rows(), layer.weight.cols());
            let mut next: Vec<Vec<f64>> = rows
                .iter()
                .map(|row| {
                    (0..units)
                        .map(|u| {
                            let mut acc = layer.bias.values()[u];
                            for (i, &xi) in row.iter().enumerate().take(fan_in) {
                                acc += xi * layer.weight.values()[i * units + u];
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            if let Some(bn) = &layer.batch_norm {
                let n = next.len() as f64;
                for u in 0..units {
                    let mean: f64 = next.iter().map(|r| r[u]).sum::<f64>() / n;
                    let var: f64 = next.iter().map(|r| (r[u] - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + 1e-12).sqrt();
                    for row in &mut next {
                        row[u] = bn.scale.values()[u] * (row[u] - mean) * inv + bn.shift.values()[u];
                    }
                }
            }
            for row in &mut next {
                for v in row.iter_mut() {
                    *v = match layer.activation {
                        Activation::LeakyRelu(s) => {
                            if *v > 0.0 {
                                *v
                            } else {
                                s * *v
                            }
                        }
                        Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                        Activation::Linear => *v,
                    };
                }
            }
            rows = next;
        }
        rows
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // 2 -> 16 -> 8 -> 2 with batch norm and mixed activations.
        let mut rng = rng_from(11, &[0]);
        let mlp = Mlp::new(
            2,
            &[
                spec(16, true, Activation::LeakyRelu(0.2)),
                spec(8, true, Activation::LeakyRelu(0.2)),
                spec(2, false, Activation::Sigmoid),
            ],
            &mut rng,
        )
        .unwrap();
        let mut data_rng = rng_from(11, &[1]);
        let batch: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..2).map(|_| data_rng.random_range(-2.0..2.0)).collect())
            .collect();

        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::from_rows(&batch).unwrap());
        let pass = mlp.forward_frozen(&mut tape, input).unwrap();
        let got = tape.value(pass.output).to_rows();

        let expected = oracle_forward(&mlp, &batch);
        for (g_row, e_row) in got.iter().zip(&expected) {
            for (g, e) in g_row.iter().zip(e_row) {
                assert!((g - e).abs() < 1e-12, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rng_from(3, &[]);
        let mut mlp = Mlp::new(
            3,
            &[spec(5, true, Activation::LeakyRelu(0.2)), spec(1, false, Activation::Linear)],
            &mut rng,
        )
        .unwrap();
        let batch = Tensor::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 2.0, -1.0]]).unwrap();
        let run = |mlp: &mut Mlp| {
            let mut tape = Tape::new();
            let x = tape.leaf(batch.clone());
            let pass = mlp.forward_frozen(&mut tape, x).unwrap();
            tape.value(pass.output).values().to_vec()
        };
        assert_eq!(run(&mut mlp), run(&mut mlp));
    }

    #[test]
    fn train_mode_refreshes_running_statistics() {
        let mut rng = rng_from(5, &[]);
        let mut mlp =
            Mlp::new(2, &[spec(4, true, Activation::Linear)], &mut rng).unwrap();
        let before = mlp.layers()[0].batch_norm.as_ref().unwrap().running_mean.clone();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![5.0, 5.0], vec![7.0, 3.0]]).unwrap());
        mlp.forward(&mut tape, x, Mode::Train).unwrap();
        let after = mlp.layers()[0].batch_norm.as_ref().unwrap().running_mean.clone();
        assert_ne!(before, after);

        // Frozen and eval-mode forwards leave the stats alone.
        let snapshot = format!("{:?}", mlp.layers()[0].batch_norm);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        mlp.forward_frozen(&mut tape, x).unwrap();
        mlp.forward_eval(&mut tape, x).unwrap();
        assert_eq!(snapshot, format!("{:?}", mlp.layers()[0].batch_norm));
    }

    #[test]
    fn flat_roundtrip_preserves_parameters() {
        let mut rng = rng_from(9, &[]);
        let mut mlp = Mlp::new(
            4,
            &[spec(6, true, Activation::LeakyRelu(0.1)), spec(3, false, Activation::Linear)],
            &mut rng,
        )
        .unwrap();
        let flat = mlp.flat_params();
        assert_eq!(flat.len(), mlp.param_count());
        let mut bumped = flat.clone();
        for v in &mut bumped {
            *v += 1.0;
        }
        mlp.assign_flat(&bumped).unwrap();
        let roundtrip = mlp.flat_params();
        assert_eq!(roundtrip, bumped);
        assert!(matches!(
            mlp.assign_flat(&flat[..flat.len() - 1]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn input_width_is_checked() {
        let mut rng = rng_from(1, &[]);
        let mlp = Mlp::new(3, &[spec(2, false, Activation::Linear)], &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        assert!(matches!(
            mlp.forward_eval(&mut tape, x),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
