//! A single Wasserstein GAN: generator, critic, and their training steps.
//!
//! The adversarial objective is `E[f(G(z))] - E[f(x)]` over the batch at
//! hand: the critic takes ascent steps on it (minus a soft Lipschitz
//! penalty), the generator takes descent steps on its first term. Several
//! such pairs trained on disjoint cells of the data make up the ensemble.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamState, ForwardPass, LayerSpec, Mlp, Mode, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams};

/// Tries to redraw a penalty pair whose two points coincide before the pair
/// is dropped.
const PAIR_RESAMPLE_CAP: usize = 16;

/// Shape of the Lipschitz penalty term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `relu(|f(x) - f(y)| / ||x - y||_2 - 1)`: penalizes difference
    /// quotients exceeding 1, i.e. the Lipschitz constant itself.
    Ratio,
    /// `relu(|f(x) - f(y)| - 1)`: penalizes raw variation regardless of how
    /// far apart the points are. Kept available for comparison; note it does
    /// not bound the Lipschitz constant.
    Literal,
}

/// Hyperparameters of one generator/critic pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GanConfig {
    pub latent_dim: usize,
    /// Hidden layer widths of the generator; every hidden layer gets batch
    /// norm and a leaky ReLU, the output layer is sigmoid.
    pub generator_hidden: Vec<usize>,
    /// Hidden layer widths of the critic; leaky ReLU, no batch norm, linear
    /// scalar output.
    pub critic_hidden: Vec<usize>,
    pub alpha_gen: f64,
    pub alpha_critic: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Coefficient of the Lipschitz penalty.
    pub gamma_reg: f64,
    pub batch_size: usize,
    pub penalty_form: PenaltyForm,
    pub leaky_slope: f64,
    /// Map the sigmoid output affinely from `[0, 1]` to `[-1, 1]` so the
    /// generator can reach the whole data bounding box.
    pub rescale_output: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            generator_hidden: vec![32, 16, 8],
            critic_hidden: vec![16, 8],
            alpha_gen: 1e-4,
            alpha_critic: 1e-4,
            critic_steps: 5,
            gamma_reg: 10.0,
            batch_size: 100,
            penalty_form: PenaltyForm::Ratio,
            leaky_slope: 0.2,
            rescale_output: true,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be at least 1".into()));
        }
        if self.generator_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be at least 1".into()));
        }
        // Zero learning rates are allowed (they freeze the corresponding
        // network), negative ones are not.
        for (name, alpha) in [("alpha_gen", self.alpha_gen), ("alpha_critic", self.alpha_critic)] {
            if !alpha.is_finite() || alpha < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {alpha}"
                )));
            }
        }
        if self.critic_steps == 0 {
            return Err(Error::InvalidArgument("critic_steps must be at least 1".into()));
        }
        if !self.gamma_reg.is_finite() || self.gamma_reg < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma_reg must be finite and non-negative, got {}",
                self.gamma_reg
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 || self.leaky_slope >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

/// Pushforward network: latent standard normal noise through an MLP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Generator {
    latent_dim: usize,
    mlp: Mlp,
    rescale: bool,
}

impl Generator {
    pub fn new(config: &GanConfig, data_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::InvalidArgument("data_dim must be at least 1".into()));
        }
        let mut specs: Vec<LayerSpec> = config
            .generator_hidden
            .iter()
            .map(|&units| LayerSpec {
                units,
                batch_norm: true,
                activation: Activation::LeakyRelu(config.leaky_slope),
            })
            .collect();
        specs.push(LayerSpec { units: data_dim, batch_norm: false, activation: Activation::Sigmoid });
        Ok(Self {
            latent_dim: config.latent_dim,
            mlp: Mlp::new(config.latent_dim, &specs, rng)?,
            rescale: config.rescale_output,
        })
    }

    /// Wrap an existing network (must map `latent_dim` to the data space).
    pub fn from_mlp(latent_dim: usize, mlp: Mlp, rescale: bool) -> Result<Self> {
        if mlp.input_dim() != latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "network input {} does not match latent_dim {latent_dim}",
                mlp.input_dim()
            )));
        }
        Ok(Self { latent_dim, mlp, rescale })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn rescale(&self) -> bool {
        self.rescale
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    fn noise(&self, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let values: Vec<f64> = (0..n * self.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(vec![n, self.latent_dim], values).expect("noise shape")
    }

    fn rescale_rows(&self, mut rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        if self.rescale {
            for row in &mut rows {
                for v in row {
                    *v = 2.0 * *v - 1.0;
                }
            }
        }
        rows
    }

    /// Draw `n` points, deterministically in `seed`. Runs the network in
    /// evaluation mode (stored batch-norm statistics).
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = rng_from(seed, &[streams::SAMPLE]);
        let z = self.noise(n, &mut rng);
        let mut tape = Tape::new();
        let z_leaf = tape.leaf(z);
        let pass = self.mlp.forward_eval(&mut tape, z_leaf)?;
        Ok(self.rescale_rows(tape.value(pass.output).to_rows()))
    }
}

/// Scalar-valued network scoring points; no batch norm, linear output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Critic {
    mlp: Mlp,
}

impl Critic {
    pub fn new(config: &GanConfig, data_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::InvalidArgument("data_dim must be at least 1".into()));
        }
        let mut specs: Vec<LayerSpec> = config
            .critic_hidden
            .iter()
            .map(|&units| LayerSpec {
                units,
                batch_norm: false,
                activation: Activation::LeakyRelu(config.leaky_slope),
            })
            .collect();
        specs.push(LayerSpec { units: 1, batch_norm: false, activation: Activation::Linear });
        Ok(Self { mlp: Mlp::new(data_dim, &specs, rng)? })
    }

    /// Wrap an existing scalar-output network.
    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.output_dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "critic output must be scalar, got {}",
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Score a batch of points.
    pub fn evaluate(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::from_rows(batch)?);
        let pass = self.mlp.forward_eval(&mut tape, leaf)?;
        Ok(tape.value(pass.output).values().to_vec())
    }
}

/// `mean f(fake) - mean f(real)`: the quantity the critic drives up and the
/// generator drives down.
pub fn critic_wasserstein_loss(
    critic: &Critic,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidArgument("both batches must be non-empty".into()));
    }
    let real_scores = critic.evaluate(real)?;
    let fake_scores = critic.evaluate(fake)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&fake_scores) - mean(&real_scores))
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Soft Lipschitz penalty over explicit pairs. Coincident pairs carry no
/// slope information and are skipped; if every pair is coincident the
/// penalty is zero.
pub fn lipschitz_penalty(
    critic: &Critic,
    pairs: &[(Vec<f64>, Vec<f64>)],
    gamma: f64,
    form: PenaltyForm,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("pairs must be non-empty".into()));
    }
    let kept: Vec<&(Vec<f64>, Vec<f64>)> = pairs.iter().filter(|(x, y)| x != y).collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    let xs: Vec<Vec<f64>> = kept.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<Vec<f64>> = kept.iter().map(|(_, y)| y.clone()).collect();
    let fx = critic.evaluate(&xs)?;
    let fy = critic.evaluate(&ys)?;
    let mut total = 0.0;
    for i in 0..kept.len() {
        let variation = (fx[i] - fy[i]).abs();
        let term = match form {
            PenaltyForm::Ratio => variation / euclidean(&xs[i], &ys[i]) - 1.0,
            PenaltyForm::Literal => variation - 1.0,
        };
        total += term.max(0.0);
    }
    Ok(gamma * total / kept.len() as f64)
}

/// Diagnostics from one critic update.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CriticStep {
    /// `mean f(fake) - mean f(real)` before the update.
    pub wasserstein: f64,
    /// Penalty value before the update.
    pub penalty: f64,
}

/// Diagnostics from one generator update.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GeneratorStep {
    /// `mean f(G(z))` before the update.
    pub loss: f64,
}

/// One generator/critic pair with its optimizer states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Gan {
    config: GanConfig,
    generator: Generator,
    critic: Critic,
    gen_adam: AdamState,
    critic_adam: AdamState,
}

impl Gan {
    /// Fresh pair with Glorot-initialized networks. All randomness comes
    /// from `seed`, so equal seeds give bit-identical pairs.
    pub fn new(config: GanConfig, data_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed, &[streams::NET_INIT]);
        let generator = Generator::new(&config, data_dim, &mut rng)?;
        let critic = Critic::new(&config, data_dim, &mut rng)?;
        let gen_adam = AdamState::new(generator.mlp.param_count(), config.alpha_gen);
        let critic_adam = AdamState::new(critic.mlp.param_count(), config.alpha_critic);
        Ok(Self { config, generator, critic, gen_adam, critic_adam })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic {
        &mut self.critic
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// Draw penalty pairs from the batch, redrawing coincident ones up to a
    /// cap; pairs that stay coincident are dropped.
    fn sample_pairs(batch: &[Vec<f64>], count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let n = batch.len();
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..PAIR_RESAMPLE_CAP {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if batch[a] != batch[b] {
                    pairs.push((a, b));
                    break;
                }
            }
        }
        pairs
    }

    /// One ascent step of the critic on `mean f(fake) - mean f(real) -
    /// penalty`, with fakes drawn from the current generator. Neither the
    /// generator's parameters nor its batch-norm statistics are touched.
    pub fn train_critic_step(&mut self, real: &[Vec<f64>], seed: u64) -> Result<CriticStep> {
        if real.is_empty() {
            return Err(Error::InvalidArgument("real batch must be non-empty".into()));
        }
        let b = real.len();
        let mut noise_rng = rng_from(seed, &[streams::CRITIC_NOISE]);
        let mut pair_rng = rng_from(seed, &[streams::PENALTY_PAIRS]);

        let mut tape = Tape::new();
        // Fakes enter the critic's graph as plain values: the generator
        // pass lives on the tape but nothing connects it to the loss, so no
        // gradient can reach it.
        let z = self.generator.noise(b, &mut noise_rng);
        let z_leaf = tape.leaf(z);
        let gen_pass = self.generator.mlp.forward_frozen(&mut tape, z_leaf)?;
        let fake_rows = self.generator.rescale_rows(tape.value(gen_pass.output).to_rows());

        let fake_leaf = tape.leaf(Tensor::from_rows(&fake_rows)?);
        let real_leaf = tape.leaf(Tensor::from_rows(real)?);
        let pass_fake = self.critic.mlp.forward_eval(&mut tape, fake_leaf)?;
        let pass_real = self.critic.mlp.forward_eval(&mut tape, real_leaf)?;
        let mean_fake = tape.mean(pass_fake.output);
        let mean_real = tape.mean(pass_real.output);
        let wloss = tape.sub(mean_fake, mean_real)?;

        let pair_indices = Self::sample_pairs(real, b, &mut pair_rng);
        let mut passes: Vec<&ForwardPass> = Vec::with_capacity(4);
        let (objective, penalty_value, pass_x, pass_y);
        if pair_indices.is_empty() {
            objective = wloss;
            penalty_value = 0.0;
            pass_x = None;
            pass_y = None;
        } else {
            let xs: Vec<Vec<f64>> = pair_indices.iter().map(|&(a, _)| real[a].clone()).collect();
            let ys: Vec<Vec<f64>> = pair_indices.iter().map(|&(_, b)| real[b].clone()).collect();
            let p = pair_indices.len();
            let xs_leaf = tape.leaf(Tensor::from_rows(&xs)?);
            let ys_leaf = tape.leaf(Tensor::from_rows(&ys)?);
            let px = self.critic.mlp.forward_eval(&mut tape, xs_leaf)?;
            let py = self.critic.mlp.forward_eval(&mut tape, ys_leaf)?;
            let diff = tape.sub(px.output, py.output)?;
            let variation = tape.abs(diff);
            let slack = match self.config.penalty_form {
                PenaltyForm::Ratio => {
                    let inv: Vec<f64> =
                        (0..p).map(|i| 1.0 / euclidean(&xs[i], &ys[i])).collect();
                    let inv_leaf = tape.leaf(Tensor::new(vec![p, 1], inv)?);
                    let ratio = tape.mul(variation, inv_leaf)?;
                    tape.add_scalar(ratio, -1.0)
                }
                PenaltyForm::Literal => tape.add_scalar(variation, -1.0),
            };
            let relu = tape.relu(slack);
            let pen_mean = tape.mean(relu);
            let penalty = tape.scale(pen_mean, self.config.gamma_reg);
            penalty_value = tape.value(penalty).item();
            objective = tape.sub(wloss, penalty)?;
            pass_x = Some(px);
            pass_y = Some(py);
        }
        let report = CriticStep { wasserstein: tape.value(wloss).item(), penalty: penalty_value };

        // Ascend the objective = descend its negation.
        let loss = tape.scale(objective, -1.0);
        let grads = tape.backward(loss)?;
        passes.push(&pass_fake);
        passes.push(&pass_real);
        if let (Some(px), Some(py)) = (&pass_x, &pass_y) {
            passes.push(px);
            passes.push(py);
        }
        let critic_grads = self.critic.mlp.flat_gradient(&tape, &grads, &passes)?;
        let mut params = self.critic.mlp.flat_params();
        self.critic_adam.step(&mut params, &critic_grads)?;
        self.critic.mlp.assign_flat(&params)?;
        Ok(report)
    }

    /// One descent step of the generator on `mean f(G(z))`. The critic's
    /// parameters are left untouched; the generator's batch-norm running
    /// statistics are refreshed from this batch.
    pub fn train_generator_step(&mut self, seed: u64) -> Result<GeneratorStep> {
        let b = self.config.batch_size;
        let mut noise_rng = rng_from(seed, &[streams::GEN_NOISE]);
        let mut tape = Tape::new();
        let z = self.generator.noise(b, &mut noise_rng);
        let z_leaf = tape.leaf(z);
        let gen_pass = self.generator.mlp.forward(&mut tape, z_leaf, Mode::Train)?;
        let output = if self.generator.rescale {
            let doubled = tape.scale(gen_pass.output, 2.0);
            tape.add_scalar(doubled, -1.0)
        } else {
            gen_pass.output
        };
        // Gradients flow through the critic's graph into the generator.
        let critic_pass = self.critic.mlp.forward_eval(&mut tape, output)?;
        let loss = tape.mean(critic_pass.output);
        let report = GeneratorStep { loss: tape.value(loss).item() };

        let grads = tape.backward(loss)?;
        let gen_grads = self.generator.mlp.flat_gradient(&tape, &grads, &[&gen_pass])?;
        let mut params = self.generator.mlp.flat_params();
        self.gen_adam.step(&mut params, &gen_grads)?;
        self.generator.mlp.assign_flat(&params)?;
        Ok(GeneratorStep { loss: report.loss })
    }

    /// `critic_steps` critic updates followed by one generator update, the
    /// per-iteration unit of the training loop.
    pub fn train_iteration(&mut self, real: &[Vec<f64>], seed: u64) -> Result<IterationReport> {
        let mut critic = Vec::with_capacity(self.config.critic_steps);
        for s in 0..self.config.critic_steps {
            critic.push(self.train_critic_step(real, crate::rng::derive_seed(seed, &[s as u64]))?);
        }
        let generator = self.train_generator_step(seed)?;
        Ok(IterationReport { critic, generator })
    }
}

/// Diagnostics from one full iteration (several critic steps, one generator
/// step).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationReport {
    pub critic: Vec<CriticStep>,
    pub generator: GeneratorStep,
}
