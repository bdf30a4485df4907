use crate::error::{Error, Result};
use crate::models::{
    AffineEncoder, AffineGenerator, EnergyModel, GaussianTestbed, GeneratorModel, LangevinKernel,
    QuadraticEnergy,
};
use crate::nn::Tensor;
use crate::sampling::ancestral_sample;

use super::grid::{discrete_kl, grid_masses, histogram, GridSpec};

/// Closed-form `KL(N(μa, diag va) || N(μb, diag vb))`.
pub fn gaussian_kl(mean_a: &[f64], var_a: &[f64], mean_b: &[f64], var_b: &[f64]) -> Result<f64> {
    let n = mean_a.len();
    if var_a.len() != n || mean_b.len() != n || var_b.len() != n {
        return Err(Error::invalid("gaussian_kl arguments differ in length"));
    }
    if !var_a.iter().chain(var_b).all(|&v| v > 0.0 && v.is_finite()) {
        return Err(Error::invalid("variances must be positive"));
    }
    Ok((0..n)
        .map(|j| {
            let d = mean_a[j] - mean_b[j];
            0.5 * ((var_b[j] / var_a[j]).ln() + (var_a[j] + d * d) / var_b[j] - 1.0)
        })
        .sum())
}

/// Distances of a testbed state from its equilibrium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NashResiduals {
    /// `KL(data || p_θ)`.
    pub r_theta: f64,
    /// `KL(M q_α || q_α)` plus the encoder term below.
    pub r_alpha: f64,
    /// `E_x KL(π(·|x) || q_α(·|x))` with `x` drawn from the revised
    /// distribution `M q_α` that the encoder is trained on.
    pub r_beta: f64,
}

pub fn nash_residuals(
    tb: &GaussianTestbed,
    energy: &QuadraticEnergy,
    generator: &AffineGenerator,
    encoder: &AffineEncoder,
    kernel: &LangevinKernel,
) -> Result<NashResiduals> {
    let d = tb.densities(energy, generator, encoder)?;
    let revised = kernel.apply(&d.q_alpha, energy)?;
    let r_beta = d.encoder.expected_kl(&d.posterior, &revised)?;
    Ok(NashResiduals {
        r_theta: d.data.kl(&d.p_theta),
        r_alpha: revised.kl(&d.q_alpha) + r_beta,
        r_beta,
    })
}

/// How a divergence entry was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    ClosedForm,
    Grid,
}

/// One evaluation point; `None` marks a quantity that is unavailable in the
/// current mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceEntry {
    pub iteration: u64,
    pub mode: EvalMode,
    pub kl_data_p: Option<f64>,
    pub kl_p_q: Option<f64>,
    pub kl_q_p: Option<f64>,
    pub kl_enc_post: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DivergenceTrace {
    pub entries: Vec<DivergenceEntry>,
}

impl DivergenceTrace {
    pub fn push(&mut self, e: DivergenceEntry) -> Result<()> {
        let vals = [e.kl_data_p, e.kl_p_q, e.kl_q_p, e.kl_enc_post];
        if vals.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("divergences must be non-negative"));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn last(&self) -> Option<&DivergenceEntry> {
        self.entries.last()
    }

    /// Values of one column, skipping unavailable entries.
    pub fn series(&self, f: impl Fn(&DivergenceEntry) -> Option<f64>) -> Vec<(u64, f64)> {
        self.entries
            .iter()
            .filter_map(|e| f(e).map(|v| (e.iteration, v)))
            .collect()
    }
}

/// Closed-form divergences of a testbed state. The encoder term averages over
/// `x ~ q_α`.
pub fn testbed_divergences(
    iteration: u64,
    tb: &GaussianTestbed,
    energy: &QuadraticEnergy,
    generator: &AffineGenerator,
    encoder: &AffineEncoder,
) -> Result<DivergenceEntry> {
    let d = tb.densities(energy, generator, encoder)?;
    Ok(DivergenceEntry {
        iteration,
        mode: EvalMode::ClosedForm,
        kl_data_p: Some(d.data.kl(&d.p_theta)),
        kl_p_q: Some(d.p_theta.kl(&d.q_alpha)),
        kl_q_p: Some(d.q_alpha.kl(&d.p_theta)),
        kl_enc_post: Some(d.encoder.expected_kl(&d.posterior, &d.q_alpha)?),
    })
}

/// Grid estimates for low-dimensional neural models: the data and the
/// generator enter through histograms of samples, the energy through its
/// grid-normalized masses. The encoder term is unavailable.
pub fn grid_divergences<E, G>(
    iteration: u64,
    data: &Tensor,
    energy: &E,
    generator: &G,
    grid: &GridSpec,
    generator_samples: usize,
    seed: u64,
) -> Result<DivergenceEntry>
where
    E: EnergyModel + ?Sized,
    G: GeneratorModel + ?Sized,
{
    let p = grid_masses(energy, grid)?;
    let (_, x_hat) = ancestral_sample(generator, generator_samples, None, true, seed)?;
    let q = histogram(&x_hat, grid)?;
    Ok(DivergenceEntry {
        iteration,
        mode: EvalMode::Grid,
        kl_data_p: Some(discrete_kl(&histogram(data, grid)?, &p)?),
        kl_p_q: Some(discrete_kl(&p, &q)?),
        kl_q_p: Some(discrete_kl(&q, &p)?),
        kl_enc_post: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Gaussian;
    use crate::rng;

    fn quadrature_kl(a: Gaussian, b: Gaussian) -> f64 {
        let (lo, hi, n) = (a.mean - 14.0 * a.std(), a.mean + 14.0 * a.std(), 400_001);
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * a.pdf(x) * (a.log_pdf(x) - b.log_pdf(x))
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn gaussian_kl_values() {
        assert_eq!(gaussian_kl(&[0.3], &[2.0], &[0.3], &[2.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&[0.0], &[0.0], &[1.0], &[1.0]).is_err());
        let mut r = rng::stream(4, &[0]);
        for _ in 0..5 {
            let mut u = || rng::standard_normal(&mut r);
            let a = Gaussian::new(u(), 0.3 + u().abs()).unwrap();
            let b = Gaussian::new(u(), 0.3 + u().abs()).unwrap();
            let closed = gaussian_kl(&[a.mean], &[a.var], &[b.mean], &[b.var]).unwrap();
            assert!((closed - quadrature_kl(a, b)).abs() < 1e-6);
        }
    }

    fn kernel() -> LangevinKernel {
        LangevinKernel { step_size: 0.002, steps: 15, noise: true }
    }

    #[test]
    fn residuals_vanish_at_equilibrium() {
        let tb = GaussianTestbed::new(2.0, 0.25, 0.3).unwrap();
        let (e, g, enc) = tb.nash().unwrap();
        let r = nash_residuals(&tb, &e, &g, &enc, &kernel()).unwrap();
        assert!(r.r_theta < 1e-10 && r.r_alpha < 1e-10 && r.r_beta < 1e-10, "{r:?}");
        let d = testbed_divergences(0, &tb, &e, &g, &enc).unwrap();
        for v in [d.kl_data_p, d.kl_p_q, d.kl_q_p, d.kl_enc_post] {
            assert!(v.unwrap() < 1e-12);
        }
    }

    #[test]
    fn perturbations_isolate_terms() {
        let tb = GaussianTestbed::new(2.0, 0.25, 0.3).unwrap();
        let (e, g, enc) = tb.nash().unwrap();
        let base = nash_residuals(&tb, &e, &g, &enc, &kernel()).unwrap();
        let moved = AffineGenerator::new(g.a(), g.b() + 0.1, g.sigma()).unwrap();
        let r = nash_residuals(&tb, &e, &moved, &enc, &kernel()).unwrap();
        assert!(r.r_alpha > 1e-3);
        assert_eq!(r.r_theta, base.r_theta);
        for (name, delta) in [("theta1", 1.1e-3), ("theta2", -1.1e-3)] {
            let mut e2 = e.clone();
            let v = e2.params().scalar(name).unwrap();
            e2.params_mut().set_scalar(name, v + delta).unwrap();
            assert!(nash_residuals(&tb, &e2, &g, &enc, &kernel()).unwrap().r_theta > 0.0);
        }
        let enc2 = AffineEncoder::new(enc.u() + 1.1e-3, enc.c(), enc.w()).unwrap();
        assert!(nash_residuals(&tb, &e, &g, &enc2, &kernel()).unwrap().r_beta > 0.0);
    }

    #[test]
    fn residuals_match_quadrature() {
        let tb = GaussianTestbed::new(0.5, 1.3, 0.4).unwrap();
        let e = QuadraticEnergy::new(0.2, 0.9).unwrap();
        let g = AffineGenerator::new(0.8, 0.1, 0.4).unwrap();
        let enc = AffineEncoder::new(0.3, 0.05, 0.7).unwrap();
        let k = LangevinKernel { step_size: 0.3, steps: 4, noise: true };
        let r = nash_residuals(&tb, &e, &g, &enc, &k).unwrap();
        let d = tb.densities(&e, &g, &enc).unwrap();
        assert!((r.r_theta - quadrature_kl(d.data, d.p_theta)).abs() < 1e-6);
        let revised = k.apply(&d.q_alpha, &e).unwrap();
        // Encoder term: outer quadrature over x of the inner closed-form KL
        // is replaced by a double quadrature over (x, z).
        let (lo, hi, n) = (revised.mean - 10.0 * revised.std(), revised.mean + 10.0 * revised.std(), 1501);
        let h = (hi - lo) / (n - 1) as f64;
        let mut outer = 0.0;
        for i in 0..n {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let inner = quadrature_kl(d.encoder.at(x).unwrap(), d.posterior.at(x).unwrap());
            outer += w * revised.pdf(x) * inner;
        }
        assert!((r.r_beta - outer * h).abs() < 1e-6);
        let alpha = quadrature_kl(revised, d.q_alpha) + outer * h;
        assert!((r.r_alpha - alpha).abs() < 1e-6);
    }

    #[test]
    fn trace_rejects_negative_values() {
        let mut t = DivergenceTrace::default();
        let e = DivergenceEntry {
            iteration: 0,
            mode: EvalMode::Grid,
            kl_data_p: Some(-1.0),
            kl_p_q: None,
            kl_q_p: None,
            kl_enc_post: None,
        };
        assert!(t.push(e).is_err());
        t.push(DivergenceEntry { kl_data_p: Some(0.2), ..e }).unwrap();
        assert_eq!(t.series(|e| e.kl_data_p), vec![(0, 0.2)]);
        assert!(t.series(|e| e.kl_p_q).is_empty());
    }
}
