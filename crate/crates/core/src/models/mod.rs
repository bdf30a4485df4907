//! The energy model `p_θ(x) ∝ exp(-U_θ(x))`, the generator `q_α(x|z)` and the
//! encoder `π_β(z|x)`, as traits with neural and linear-Gaussian
//! implementations.
//!
//! Conditional models take an extra condition batch `y` that is fed to the
//! underlying network alongside the primary input; gradients are reported for
//! the primary input only.

mod neural;
mod testbed;

pub use neural::{NetSizes, NeuralEncoder, NeuralEnergy, NeuralGenerator};
pub use testbed::{
    AffineEncoder, AffineGenerator, Gaussian, GaussianTestbed, LangevinKernel, LinearPosterior,
    QuadraticEnergy, TestbedDensities,
};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub trait EnergyModel {
    fn data_dim(&self) -> usize;

    fn cond_dim(&self) -> usize {
        0
    }

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// `U(x_b)` for every row of the batch.
    fn energies(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Vec<f64>>;

    /// Energies together with `∂U/∂x` (same shape as `x`).
    fn energies_and_grad(&self, x: &Tensor, cond: Option<&Tensor>)
        -> Result<(Vec<f64>, Tensor)>;

    /// `Σ_b weights[b] · ∂U(x_b)/∂θ`.
    fn weighted_param_grad(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
        weights: &[f64],
    ) -> Result<ParamStore>;
}

pub trait GeneratorModel {
    type Trace;

    fn latent_dim(&self) -> usize;

    fn data_dim(&self) -> usize;

    fn cond_dim(&self) -> usize {
        0
    }

    /// Observation noise standard deviation.
    fn sigma(&self) -> f64;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Deterministic mean `g_α(z)`.
    fn forward(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Self::Trace)>;

    /// Gradients of `<upstream, g_α(z)>` with respect to α and z.
    fn backward(&self, trace: &Self::Trace, upstream: &Tensor) -> Result<(ParamStore, Tensor)>;
}

pub trait InferenceModel {
    type Trace;

    fn latent_dim(&self) -> usize;

    fn data_dim(&self) -> usize;

    fn cond_dim(&self) -> usize {
        0
    }

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Posterior mean and log-variance, each `[batch, latent_dim]`.
    fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor, Self::Trace)>;

    /// Gradient with respect to β given upstream gradients on mean and log-variance.
    fn backward(&self, trace: &Self::Trace, d_mean: &Tensor, d_logvar: &Tensor)
        -> Result<ParamStore>;
}

/// Validates a batch against the expected width and conditioning.
pub(crate) fn check_batch(
    x: &Tensor,
    dim: usize,
    cond: Option<&Tensor>,
    cond_dim: usize,
    context: &'static str,
) -> Result<usize> {
    if x.shape().len() > 2 || x.cols() != dim {
        return Err(Error::Shape {
            context,
            expected: vec![dim],
            actual: x.shape().to_vec(),
        });
    }
    x.ensure_finite(context)?;
    match (cond, cond_dim) {
        (None, 0) => {}
        (Some(c), k) if k > 0 => {
            if c.cols() != k || c.rows() != x.rows() {
                return Err(Error::Shape {
                    context: "condition batch",
                    expected: vec![x.rows(), k],
                    actual: c.shape().to_vec(),
                });
            }
            c.ensure_finite("condition batch")?;
        }
        (None, _) => return Err(Error::invalid(format!("{context}: condition required"))),
        (Some(_), _) => {
            return Err(Error::invalid(format!(
                "{context}: model is unconditional but a condition was given"
            )))
        }
    }
    Ok(x.rows())
}

/// Energy of a single example.
pub fn energy<E: EnergyModel + ?Sized>(m: &E, x: &Tensor, cond: Option<&Tensor>) -> Result<f64> {
    if x.rows() != 1 {
        return Err(Error::invalid("energy expects a single example"));
    }
    Ok(m.energies(x, cond)?[0])
}

pub fn mean_energy<E: EnergyModel + ?Sized>(
    m: &E,
    x: &Tensor,
    cond: Option<&Tensor>,
) -> Result<f64> {
    let e = m.energies(x, cond)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// `g_α(z) + σ·noise`, or the mean `g_α(z)` when `noise` is `None`.
pub fn generate<G: GeneratorModel + ?Sized>(
    g: &G,
    z: &Tensor,
    noise: Option<&Tensor>,
    cond: Option<&Tensor>,
) -> Result<Tensor> {
    let (mean, _) = g.forward(z, cond)?;
    match noise {
        None => Ok(mean),
        Some(eps) => {
            if eps.len() != mean.len() {
                return Err(Error::Shape {
                    context: "generator noise",
                    expected: mean.shape().to_vec(),
                    actual: eps.shape().to_vec(),
                });
            }
            eps.ensure_finite("generator noise")?;
            mean.add_scaled(eps, g.sigma())
        }
    }
}

/// Posterior mean and variance `v = exp(log-variance)`.
pub fn infer<I: InferenceModel + ?Sized>(
    e: &I,
    x: &Tensor,
    cond: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let (mu, logvar, _) = e.forward(x, cond)?;
    let v = logvar.map(f64::exp);
    if !v.data().iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::NonFinite("encoder variance"));
    }
    Ok((mu, v))
}

/// `log N(x; g_α(z), σ² I_D)` for every row.
pub fn log_gaussian_conditional<G: GeneratorModel + ?Sized>(
    g: &G,
    x: &Tensor,
    z: &Tensor,
    cond: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let sigma = g.sigma();
    if !(sigma > 0.0) {
        return Err(Error::invalid("log-likelihood requires sigma > 0"));
    }
    check_batch(x, g.data_dim(), None, 0, "observation batch")?;
    let (mean, _) = g.forward(z, cond)?;
    if mean.rows() != x.rows() {
        return Err(Error::Shape {
            context: "log_gaussian_conditional",
            expected: mean.shape().to_vec(),
            actual: x.shape().to_vec(),
        });
    }
    let d = g.data_dim() as f64;
    let norm = -0.5 * d * (2.0 * PI * sigma * sigma).ln();
    Ok(x
        .iter_rows()
        .zip(mean.iter_rows())
        .map(|(xr, mr)| {
            let sq: f64 = xr.iter().zip(mr).map(|(a, b)| (a - b) * (a - b)).sum();
            norm - sq / (2.0 * sigma * sigma)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(a: f64, b: f64, sigma: f64) -> AffineGenerator {
        AffineGenerator::new(a, b, sigma).unwrap()
    }

    #[test]
    fn generate_affine_arithmetic() {
        let z = Tensor::vector(vec![1.0]).unwrap();
        let zero = Tensor::vector(vec![0.0]).unwrap();
        let one = Tensor::vector(vec![1.0]).unwrap();
        let x = generate(&g(1.0, 0.0, 0.3), &z, Some(&zero), None).unwrap();
        assert_eq!(x.data(), &[1.0]);
        let x = generate(&g(2.0, 1.0, 0.5), &z, Some(&one), None).unwrap();
        assert_eq!(x.data(), &[3.5]);
        assert!(generate(&g(2.0, 1.0, 0.5), &z, Some(&Tensor::vector(vec![0.0; 2]).unwrap()), None).is_err());
    }

    #[test]
    fn log_conditional_values() {
        let gen = g(1.0, 0.0, 1.0);
        let z = Tensor::vector(vec![0.5]).unwrap();
        let at_mean = log_gaussian_conditional(&gen, &Tensor::vector(vec![0.5]).unwrap(), &z, None)
            .unwrap()[0];
        assert!((at_mean + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((at_mean - -0.918_938_533_204_672_7).abs() < 1e-12);
        let off = log_gaussian_conditional(&gen, &Tensor::vector(vec![1.5]).unwrap(), &z, None)
            .unwrap()[0];
        assert!((off - (at_mean - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn log_conditional_matches_independent_normal_density() {
        use statrs::distribution::{Continuous, Normal};
        let gen = g(-0.7, 0.3, 0.45);
        for (x, z) in [(0.1, 0.2), (-1.3, 0.9), (2.0, -1.5)] {
            let got = log_gaussian_conditional(
                &gen,
                &Tensor::vector(vec![x]).unwrap(),
                &Tensor::vector(vec![z]).unwrap(),
                None,
            )
            .unwrap()[0];
            let expected = Normal::new(-0.7 * z + 0.3, 0.45).unwrap().ln_pdf(x);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn condition_mismatch_rejected() {
        let e = QuadraticEnergy::new(0.0, 1.0).unwrap();
        let x = Tensor::vector(vec![1.0]).unwrap();
        assert!(e.energies(&x, Some(&x)).is_err());
    }
}
