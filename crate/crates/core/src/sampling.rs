//! Ancestral sampling from the generator, Langevin revision on the energy,
//! and their composition.
//!
//! The Langevin update is `x ← x − (δ²/2)·∂U/∂x + δ·ε`: the drift carries
//! `δ²/2` and the noise has standard deviation `δ`, so `δ` plays the role of
//! `√(2·stepsize)` in the other common parameterization.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{EnergyModel, GeneratorModel};
use crate::nn::Tensor;
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Number of Langevin steps `l`.
    pub steps: usize,
    /// Step size `δ`.
    pub step_size: f64,
    pub noise_enabled: bool,
    /// Add `σ·ε` to the generator mean when drawing initial samples.
    pub ancestral_noise: bool,
    pub clamp: Option<(f64, f64)>,
    pub keep_frames: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 15,
            step_size: 0.002,
            noise_enabled: true,
            ancestral_noise: true,
            clamp: None,
            keep_frames: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::invalid(format!("empty clamp range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Output of a sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRecord {
    /// Latent draws `ẑ` (empty when the chain was not started from the generator).
    pub latent: Option<Tensor>,
    /// Starting batch `x̂`.
    pub initial: Tensor,
    /// All states `x_0..x_l` when frame retention is on.
    pub frames: Option<Vec<Tensor>>,
    /// Revised batch `x̃`.
    pub final_state: Tensor,
    /// Mean energy of each state `x_0..x_l`.
    pub energy_trace: Vec<f64>,
}

fn first_bad_row(x: &Tensor) -> usize {
    x.as_batch()
        .iter_rows()
        .position(|r| r.iter().any(|v| !v.is_finite()))
        .unwrap_or(0)
}

/// Draws `ẑ ~ N(0, I)` and `x̂ = g(ẑ) + σε` (or `g(ẑ)` without noise).
/// Chain `b` uses its own stream so results do not depend on batch layout.
pub fn ancestral_sample<G: GeneratorModel + ?Sized>(
    g: &G,
    batch: usize,
    cond: Option<&Tensor>,
    add_noise: bool,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if batch == 0 {
        return Err(Error::invalid("batch must be at least 1"));
    }
    let (d, dim) = (g.latent_dim(), g.data_dim());
    let mut z = vec![0.0; batch * d];
    let mut eps = vec![0.0; batch * dim];
    for b in 0..batch {
        let mut r = rng::stream(seed, &[tag::ANCESTRAL, b as u64]);
        rng::fill_standard_normal(&mut r, &mut z[b * d..(b + 1) * d]);
        rng::fill_standard_normal(&mut r, &mut eps[b * dim..(b + 1) * dim]);
    }
    let z = Tensor::matrix(batch, d, z)?;
    let (mean, _) = g.forward(&z, cond)?;
    let x = if add_noise && g.sigma() > 0.0 {
        mean.add_scaled(&Tensor::matrix(batch, dim, eps)?, g.sigma())?
    } else {
        mean
    };
    Ok((z, x))
}

/// One Langevin update; `noise = None` drops the diffusion term.
pub fn langevin_step<E: EnergyModel + ?Sized>(
    m: &E,
    x: &Tensor,
    cond: Option<&Tensor>,
    step_size: f64,
    noise: Option<&Tensor>,
) -> Result<Tensor> {
    Ok(step_with_energy(m, x, cond, step_size, noise, 0)?.0)
}

fn step_with_energy<E: EnergyModel + ?Sized>(
    m: &E,
    x: &Tensor,
    cond: Option<&Tensor>,
    step_size: f64,
    noise: Option<&Tensor>,
    step: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let (u, grad) = m.energies_and_grad(x, cond)?;
    if !grad.is_finite() {
        return Err(Error::Diverged { step, chain: first_bad_row(&grad) });
    }
    let mut next = x.add_scaled(&grad, -0.5 * step_size * step_size)?;
    if let Some(eps) = noise {
        next = next.add_scaled(eps, step_size)?;
    }
    if !next.is_finite() {
        return Err(Error::Diverged { step, chain: first_bad_row(&next) });
    }
    Ok((next, u))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs `cfg.steps` Langevin updates from `x0`. Chain `b` draws its noise
/// from the stream `(seed, b)`.
pub fn langevin_chain<E: EnergyModel + ?Sized>(
    m: &E,
    x0: &Tensor,
    cond: Option<&Tensor>,
    cfg: &SamplerConfig,
) -> Result<ChainRecord> {
    cfg.validate()?;
    let x0 = x0.as_batch();
    let (rows, cols) = (x0.rows(), x0.cols());
    let mut streams: Vec<ChaCha8Rng> = if cfg.noise_enabled {
        (0..rows)
            .map(|b| rng::stream(cfg.seed, &[tag::LANGEVIN, b as u64]))
            .collect()
    } else {
        Vec::new()
    };
    let mut frames = cfg.keep_frames.then(|| vec![x0.clone()]);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut x = x0.clone();
    let mut noise = Tensor::zeros(vec![rows, cols]);
    for step in 0..cfg.steps {
        if cfg.noise_enabled {
            for (b, r) in streams.iter_mut().enumerate() {
                rng::fill_standard_normal(r, noise.row_mut(b));
            }
        }
        let eps = cfg.noise_enabled.then_some(&noise);
        let (mut next, u) = step_with_energy(m, &x, cond, cfg.step_size, eps, step)?;
        if let Some((lo, hi)) = cfg.clamp {
            next = next.map(|v| v.clamp(lo, hi));
        }
        trace.push(mean(&u));
        if let Some(f) = frames.as_mut() {
            f.push(next.clone());
        }
        x = next;
    }
    trace.push(mean(&m.energies(&x, cond)?));
    Ok(ChainRecord { latent: None, initial: x0, frames, final_state: x, energy_trace: trace })
}

/// Ancestral sampling followed by Langevin revision.
pub fn ancestral_langevin_sample<G, E>(
    g: &G,
    m: &E,
    batch: usize,
    cond: Option<&Tensor>,
    cfg: &SamplerConfig,
) -> Result<ChainRecord>
where
    G: GeneratorModel + ?Sized,
    E: EnergyModel + ?Sized,
{
    cfg.validate()?;
    let (z, x_hat) = ancestral_sample(g, batch, cond, cfg.ancestral_noise, cfg.seed)?;
    let mut record = langevin_chain(m, &x_hat, cond, cfg)?;
    record.latent = Some(z);
    Ok(record)
}

/// `z = μ + √v ⊙ ε` for a given `ε`.
pub fn reparameterize(mu: &Tensor, v: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.shape() != v.shape() || mu.shape() != eps.shape() {
        return Err(Error::Shape {
            context: "reparameterize",
            expected: mu.shape().to_vec(),
            actual: if mu.shape() != v.shape() { v.shape() } else { eps.shape() }.to_vec(),
        });
    }
    if !v.data().iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("variance must be positive"));
    }
    let data = mu
        .data()
        .iter()
        .zip(v.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s.sqrt() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// `z = μ + √v ⊙ ε` with `ε` drawn from the stream keyed by `seed`.
pub fn reparameterized_draw(mu: &Tensor, v: &Tensor, seed: u64) -> Result<Tensor> {
    let mut eps = Tensor::zeros(mu.shape().to_vec());
    rng::fill_standard_normal(&mut rng::stream(seed, &[tag::REPARAM]), eps.data_mut());
    reparameterize(mu, v, &eps)
}

/// Deterministic conditional prediction: the generator mean at `z = 0`,
/// refined by noise-free Langevin steps on `U(x, y)`.
pub fn predict<G, E>(g: &G, m: &E, cond: &Tensor, cfg: &SamplerConfig) -> Result<Tensor>
where
    G: GeneratorModel + ?Sized,
    E: EnergyModel + ?Sized,
{
    if cfg.noise_enabled {
        return Err(Error::invalid("prediction requires Langevin noise to be disabled"));
    }
    let cond = cond.as_batch();
    let z = Tensor::zeros(vec![cond.rows(), g.latent_dim()]);
    let (x_hat, _) = g.forward(&z, Some(&cond))?;
    Ok(langevin_chain(m, &x_hat, Some(&cond), cfg)?.final_state)
}
