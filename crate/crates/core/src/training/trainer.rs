use rand::seq::SliceRandom;

use super::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use super::vae::{vae_loss, ElboEstimator};
use crate::error::{Error, Result};
use crate::models::{EnergyModel, GeneratorModel, InferenceModel};
use crate::nn::{ParamStore, Tensor};
use crate::rng::{self, tag};
use crate::sampling::{ancestral_langevin_sample, ChainRecord, SamplerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Data examples per iteration (`n`).
    pub batch_size: usize,
    /// Synthesized examples per iteration (`ñ`); conditional runs use one
    /// synthesized example per data example instead.
    pub sample_batch: usize,
    /// Langevin settings; the seed is replaced by a per-iteration seed.
    pub sampler: SamplerConfig,
    /// Weight of the KL-to-prior term.
    pub gamma: f64,
    pub adam_energy: AdamConfig,
    pub adam_generator: AdamConfig,
    pub adam_encoder: AdamConfig,
    pub iterations: u64,
    pub seed: u64,
    /// Optional global-norm gradient clip, applied per model.
    pub clip_norm: Option<f64>,
    /// L2 penalty coefficient on the energy parameters.
    pub weight_decay: f64,
    pub estimator: ElboEstimator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            sample_batch: 100,
            sampler: SamplerConfig::default(),
            gamma: 2.0,
            adam_energy: AdamConfig::with_lr(1e-4),
            adam_generator: AdamConfig::with_lr(3e-4),
            adam_encoder: AdamConfig::with_lr(3e-4),
            iterations: 10_000,
            seed: 0,
            clip_norm: None,
            weight_decay: 0.0,
            estimator: ElboEstimator::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::ConfigValue {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        if self.batch_size == 0 {
            return Err(bad("train.batch_size", "must be at least 1"));
        }
        if self.sample_batch == 0 {
            return Err(bad("train.sample_batch", "must be at least 1"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(bad("train.gamma", "must be finite and non-negative"));
        }
        if self.iterations == 0 {
            return Err(bad("train.iterations", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("train.weight_decay", "must be non-negative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(bad("train.clip_norm", "must be positive"));
            }
        }
        self.sampler
            .validate()
            .map_err(|e| bad("langevin", &e.to_string()))?;
        self.adam_energy.validate("adam.energy")?;
        self.adam_generator.validate("adam.generator")?;
        self.adam_encoder.validate("adam.encoder")?;
        Ok(())
    }

    /// Sampler settings for iteration `t`.
    pub fn sampler_for(&self, t: u64) -> SamplerConfig {
        SamplerConfig {
            seed: rng::derive_seed(self.seed, &[tag::ITERATION, t, tag::SAMPLER]),
            ..self.sampler.clone()
        }
    }
}

/// Per-iteration summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    /// Number of completed iterations after this one.
    pub iteration: u64,
    /// Mean energy of the data batch.
    pub pos_energy: f64,
    /// Mean energy of the revised samples `x̃`.
    pub neg_energy: f64,
    pub recon: f64,
    pub kl_prior: f64,
    pub vae_loss: f64,
    /// Mean `U(x̂) − U(x̃)`.
    pub energy_gap: f64,
}

/// Optimizer moments and the iteration counter; together with the seed this
/// is everything needed to resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub opt_energy: AdamState,
    pub opt_generator: AdamState,
    pub opt_encoder: AdamState,
    pub iteration: u64,
}

/// `(1/n) Σ ∂U(x_i)/∂θ − (1/ñ) Σ ∂U(x̃_i)/∂θ`.
pub fn ebm_grad<E: EnergyModel + ?Sized>(
    m: &E,
    data: &Tensor,
    data_cond: Option<&Tensor>,
    samples: &Tensor,
    sample_cond: Option<&Tensor>,
) -> Result<ParamStore> {
    let (n, ns) = (data.rows(), samples.rows());
    if data.is_empty() || samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut g = m.weighted_param_grad(data, data_cond, &vec![1.0 / n as f64; n])?;
    let neg = m.weighted_param_grad(samples, sample_cond, &vec![1.0 / ns as f64; ns])?;
    g.axpy(-1.0, &neg)?;
    Ok(g)
}

/// Indices of the minibatch used at iteration `t`: each epoch visits a fresh
/// permutation of the data in consecutive blocks (a trailing partial block is
/// dropped). Batches larger than the data cycle through the permutation.
pub fn batch_indices(n_data: usize, batch: usize, seed: u64, t: u64) -> Vec<usize> {
    let per_epoch = (n_data / batch).max(1) as u64;
    let epoch = t / per_epoch;
    let k = (t % per_epoch) as usize;
    let mut perm: Vec<usize> = (0..n_data).collect();
    perm.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch]));
    (0..batch).map(|j| perm[(k * batch + j) % n_data]).collect()
}

pub struct Trainer<E, G, I> {
    pub energy: E,
    pub generator: G,
    pub encoder: I,
    pub config: TrainConfig,
    pub state: TrainerState,
}

impl<E, G, I> Trainer<E, G, I>
where
    E: EnergyModel,
    G: GeneratorModel,
    I: InferenceModel,
{
    pub fn new(energy: E, generator: G, encoder: I, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let cond = (energy.cond_dim(), generator.cond_dim(), encoder.cond_dim());
        if cond.0 != cond.1 || cond.1 != cond.2 {
            return Err(Error::invalid("models disagree on the condition width"));
        }
        if generator.data_dim() != energy.data_dim()
            || encoder.data_dim() != energy.data_dim()
            || generator.latent_dim() != encoder.latent_dim()
        {
            return Err(Error::invalid("model dimensions do not line up"));
        }
        let state = TrainerState {
            opt_energy: AdamState::new(energy.params()),
            opt_generator: AdamState::new(generator.params()),
            opt_encoder: AdamState::new(encoder.params()),
            iteration: 0,
        };
        Ok(Self { energy, generator, encoder, config, state })
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    /// One iteration on a data batch, returning the chain it drew.
    ///
    /// Samples come from the generator and are revised on the current energy;
    /// the energy then takes a step on the data/sample contrast and the
    /// generator and encoder take a step on the variational loss over the
    /// revised samples. Both gradients are computed before either update is
    /// applied, so a failing iteration leaves every model untouched. This is
    /// the same as applying the energy update first, because the samples are
    /// held fixed and the variational loss does not involve the energy.
    ///
    /// With a condition batch, one sample is drawn per data row under that
    /// row's condition.
    pub fn step(&mut self, x: &Tensor, cond: Option<&Tensor>) -> Result<(LossReport, ChainRecord)> {
        let t = self.state.iteration;
        let cfg = &self.config;
        let x = x.as_batch();
        let ns = if cond.is_some() { x.rows() } else { cfg.sample_batch };
        let record =
            ancestral_langevin_sample(&self.generator, &self.energy, ns, cond, &cfg.sampler_for(t))?;
        let samples = &record.final_state;

        let pos = self.energy.energies(&x, cond)?;
        let neg = self.energy.energies(samples, cond)?;
        let mut g_theta = ebm_grad(&self.energy, &x, cond, samples, cond)?;
        if cfg.weight_decay > 0.0 {
            g_theta.axpy(cfg.weight_decay, self.energy.params())?;
        }

        let vae_seed = rng::derive_seed(cfg.seed, &[tag::ITERATION, t, tag::REPARAM]);
        let vae = vae_loss(
            &self.generator,
            &self.encoder,
            samples,
            cond,
            cfg.gamma,
            cfg.estimator,
            vae_seed,
        )?;
        let (mut g_alpha, mut g_beta) = (vae.grad_generator, vae.grad_encoder);
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut g_theta, c);
            clip_global_norm(&mut g_alpha, c);
            clip_global_norm(&mut g_beta, c);
        }
        if !g_theta.is_finite() || !g_alpha.is_finite() || !g_beta.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let (ae, ag, ai) = (cfg.adam_energy, cfg.adam_generator, cfg.adam_encoder);
        adam_step(self.energy.params_mut(), &g_theta, &mut self.state.opt_energy, &ae)?;
        adam_step(self.generator.params_mut(), &g_alpha, &mut self.state.opt_generator, &ag)?;
        adam_step(self.encoder.params_mut(), &g_beta, &mut self.state.opt_encoder, &ai)?;
        self.state.iteration += 1;

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let trace = &record.energy_trace;
        let report = LossReport {
            iteration: self.state.iteration,
            pos_energy: mean(&pos),
            neg_energy: mean(&neg),
            recon: vae.recon,
            kl_prior: vae.kl,
            vae_loss: vae.loss,
            energy_gap: trace[0] - trace[trace.len() - 1],
        };
        Ok((report, record))
    }

    pub fn train_iteration(&mut self, x: &Tensor, cond: Option<&Tensor>) -> Result<LossReport> {
        Ok(self.step(x, cond)?.0)
    }

    /// Runs shuffled minibatch iterations until `until` iterations have been
    /// completed. The observer sees every iteration and may stop the loop by
    /// returning `false`.
    pub fn run<F>(
        &mut self,
        data: &Tensor,
        cond: Option<&Tensor>,
        until: u64,
        mut observer: F,
    ) -> Result<()>
    where
        F: FnMut(&Self, &LossReport, &ChainRecord) -> Result<bool>,
    {
        let data = data.as_batch();
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        if let Some(c) = cond {
            if c.rows() != data.rows() {
                return Err(Error::invalid("condition rows do not match data rows"));
            }
        }
        while self.state.iteration < until {
            let idx = batch_indices(
                data.rows(),
                self.config.batch_size,
                self.config.seed,
                self.state.iteration,
            );
            let x = data.select_rows(&idx)?;
            let y = cond.map(|c| c.select_rows(&idx)).transpose()?;
            let (report, record) = self.step(&x, y.as_ref())?;
            if !observer(self, &report, &record)? {
                break;
            }
        }
        Ok(())
    }
}
