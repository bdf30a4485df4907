//! Self-tests run by `vmcmc check`: gradients against central differences,
//! quadrature against closed forms, and the linear-Gaussian testbed
//! against its analytic kernel, equilibrium and evidence.

use crate::diagnostics::{grid_log_partition, nash_residuals, GridSpec};
use crate::error::Result;
use crate::models::{
    AffineEncoder, AffineGenerator, EnergyModel, GaussianTestbed, GeneratorModel, InferenceModel,
    LangevinKernel, NeuralEncoder, NeuralEnergy, NeuralGenerator, QuadraticEnergy,
};
use crate::nn::{central_difference, finite_diff_check, max_relative_error, ParamStore, Tensor};
use crate::rng::{self, tag};
use crate::sampling::{langevin_chain, SamplerConfig};
use crate::training::{ebm_grad, vae_loss, ElboEstimator};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

fn random_batch(rows: usize, cols: usize, r: &mut impl rand::Rng) -> Result<Tensor> {
    let mut v = vec![0.0; rows * cols];
    rng::fill_standard_normal(r, &mut v);
    Tensor::matrix(rows, cols, v)
}

fn jitter(store: &mut ParamStore, r: &mut impl rand::Rng) {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng::standard_normal(r);
        }
    }
}

/// FD gradient of `f` over a store's flattened entries.
fn store_fd(store: &ParamStore, mut f: impl FnMut(&ParamStore) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = store.clone();
    let mut failure = None;
    let g = central_difference(
        |v| {
            probe.unflatten(v).expect("same layout");
            f(&probe).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &store.flatten(),
        FD_STEP,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

/// Max relative FD error over `nets` random small networks, covering raw
/// net gradients and the two training composites.
pub fn gradient_oracle(nets: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for i in 0..nets {
        let mut r = rng::stream(seed, &[tag::INIT_ENERGY, i as u64]);
        let dd = 1 + i % 3;
        let dz = 1 + i % 2;
        let hidden = [2 + i % 4, 3];
        let mut energy = NeuralEnergy::new(dd, 0, &hidden, &mut r)?;
        let mut generator = NeuralGenerator::new(dz, dd, 0, &hidden, 0.3 + 0.1 * (i % 3) as f64, &mut r)?;
        let mut encoder = NeuralEncoder::new(dd, dz, 0, &hidden, &mut r)?;
        // Zero-initialized biases put hidden units exactly on ReLU kinks
        // for some inputs; jitter every parameter off them.
        jitter(energy.params_mut(), &mut r);
        jitter(generator.params_mut(), &mut r);
        jitter(encoder.params_mut(), &mut r);
        let x = random_batch(4, dd, &mut r)?;
        let xs = random_batch(3, dd, &mut r)?;
        let z = random_batch(4, dz, &mut r)?;
        for (net, input) in [(energy.net(), &x), (generator.net(), &z), (encoder.net(), &x)] {
            worst = worst.max(finite_diff_check(net, input, FD_STEP, FD_TOL)?.max_error());
        }

        let analytic = ebm_grad(&energy, &x, None, &xs, None)?.flatten();
        let theta = energy.params().clone();
        let numeric = store_fd(&theta, |p| {
            energy.params_mut().unflatten(&p.flatten())?;
            let a = energy.energies(&x, None)?;
            let b = energy.energies(&xs, None)?;
            Ok(a.iter().sum::<f64>() / a.len() as f64 - b.iter().sum::<f64>() / b.len() as f64)
        })?;
        energy.params_mut().unflatten(&theta.flatten())?;
        worst = worst.max(max_relative_error(&analytic, &numeric));

        let est = ElboEstimator::Reparameterized { draws: 2 };
        let vseed = seed ^ i as u64;
        let base = vae_loss(&generator, &encoder, &x, None, 2.0, est, vseed)?;
        let alpha = generator.params().clone();
        let numeric = store_fd(&alpha, |p| {
            generator.params_mut().unflatten(&p.flatten())?;
            Ok(vae_loss(&generator, &encoder, &x, None, 2.0, est, vseed)?.loss)
        })?;
        generator.params_mut().unflatten(&alpha.flatten())?;
        worst = worst.max(max_relative_error(&base.grad_generator.flatten(), &numeric));
        let beta = encoder.params().clone();
        let numeric = store_fd(&beta, |p| {
            encoder.params_mut().unflatten(&p.flatten())?;
            Ok(vae_loss(&generator, &encoder, &x, None, 2.0, est, vseed)?.loss)
        })?;
        encoder.params_mut().unflatten(&beta.flatten())?;
        worst = worst.max(max_relative_error(&base.grad_encoder.flatten(), &numeric));
    }
    Ok(CheckOutcome {
        name: "gradients",
        passed: worst < FD_TOL,
        detail: format!("{nets} random nets, max relative error {worst:.3e}"),
    })
}

/// log Z of `x²/2` on `[−8, 8]` against `log √(2π)`.
pub fn partition_quadrature() -> Result<CheckOutcome> {
    let e = QuadraticEnergy::new(0.0, 1.0)?;
    let z = grid_log_partition(&e, &GridSpec::square(1, -8.0, 8.0, 2000)?)?;
    let err = (z - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs();
    Ok(CheckOutcome {
        name: "partition",
        passed: err < 1e-4,
        detail: format!("|log Z − log √(2π)| = {err:.3e}"),
    })
}

/// Simulated Langevin chains on a quadratic energy against the closed-form
/// kernel, at l ∈ {1, 5, 15}; passes when every moment is within 3 standard
/// errors.
pub fn langevin_kernel(chains: usize, seed: u64) -> Result<CheckOutcome> {
    let e = QuadraticEnergy::new(0.6, 1.5)?;
    let start = crate::models::Gaussian::new(1.0, 0.5)?;
    let mut worst: f64 = 0.0;
    for (k, steps) in [1usize, 5, 15].into_iter().enumerate() {
        let cfg = SamplerConfig {
            steps,
            step_size: 0.3,
            seed: rng::derive_seed(seed, &[tag::LANGEVIN, k as u64]),
            ..SamplerConfig::default()
        };
        let mut r = rng::stream(seed, &[tag::ANCESTRAL, k as u64]);
        let x0: Vec<f64> = (0..chains).map(|_| start.mean + start.std() * rng::standard_normal(&mut r)).collect();
        let x0 = Tensor::matrix(chains, 1, x0)?;
        let out = langevin_chain(&e, &x0, None, &cfg)?.final_state;
        let want = LangevinKernel { step_size: cfg.step_size, steps, noise: true }.apply(&start, &e)?;
        let n = chains as f64;
        let mean = out.data().iter().sum::<f64>() / n;
        let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z_mean = (mean - want.mean).abs() / (want.var / n).sqrt();
        let z_var = (var - want.var).abs() / (want.var * (2.0 / (n - 1.0)).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    Ok(CheckOutcome {
        name: "langevin-kernel",
        passed: worst < 3.0,
        detail: format!("{chains} chains per l, largest |z| {worst:.2}"),
    })
}

/// Residuals of the analytic equilibrium.
pub fn nash_equilibrium() -> Result<CheckOutcome> {
    let tb = GaussianTestbed::new(2.0, 0.25, 0.3)?;
    let (e, g, enc) = tb.nash()?;
    let kernel = LangevinKernel { step_size: 0.002, steps: 15, noise: true };
    let r = nash_residuals(&tb, &e, &g, &enc, &kernel)?;
    let worst = r.r_theta.max(r.r_alpha).max(r.r_beta);
    Ok(CheckOutcome {
        name: "nash-residuals",
        passed: worst < 1e-10,
        detail: format!("max residual {worst:.3e}"),
    })
}

/// The VAE loss bounds the exact negative log evidence from above, and the
/// bound is tight when the encoder is the true posterior.
pub fn elbo_tightness(batches: usize, seed: u64) -> Result<CheckOutcome> {
    let est = ElboEstimator::GaussHermite { nodes: 20 };
    let mut worst_violation: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut r = rng::stream(seed, &[tag::EVAL]);
    for _ in 0..batches {
        let mut u = || rng::standard_normal(&mut r);
        let g = AffineGenerator::new(u(), u(), 0.2 + 0.5 * u().abs())?;
        let enc = AffineEncoder::new(u(), u(), 0.2 + u().abs())?;
        let q = g.marginal()?;
        let x: Vec<f64> = (0..8).map(|_| q.mean + 2.0 * q.std() * u()).collect();
        let nll = -x.iter().map(|&v| q.log_pdf(v)).sum::<f64>() / x.len() as f64;
        let x = Tensor::matrix(8, 1, x)?;
        let loss = vae_loss(&g, &enc, &x, None, 1.0, est, 0)?.loss;
        worst_violation = worst_violation.max(nll - loss);
        let exact = AffineEncoder::from_posterior(&g.posterior()?)?;
        let tight = vae_loss(&g, &exact, &x, None, 1.0, est, 0)?.loss;
        worst_gap = worst_gap.max((tight - nll).abs());
    }
    Ok(CheckOutcome {
        name: "elbo",
        passed: worst_violation <= 1e-12 && worst_gap < 1e-8,
        detail: format!(
            "{batches} batches, bound violation {worst_violation:.3e}, gap at posterior {worst_gap:.3e}"
        ),
    })
}

pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        gradient_oracle(20, seed)?,
        partition_quadrature()?,
        langevin_kernel(10_000, seed)?,
        nash_equilibrium()?,
        elbo_tightness(200, seed)?,
    ])
}
