//! One-dimensional linear-Gaussian models where every density, posterior and
//! Langevin transition is available in closed form.

use super::{check_batch, EnergyModel, GeneratorModel, InferenceModel};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

/// Univariate normal `N(mean, var)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var <= 0.0 {
            return Err(Error::NotNormalizable(format!(
                "normal with mean {mean} and variance {var}"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln() - d * d / (2.0 * self.var)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &Gaussian) -> f64 {
        let d = self.mean - other.mean;
        0.5 * ((other.var / self.var).ln() + (self.var + d * d) / other.var - 1.0)
    }
}

/// A conditional normal `N(slope·x + intercept, var)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPosterior {
    pub slope: f64,
    pub intercept: f64,
    pub var: f64,
}

impl LinearPosterior {
    pub fn at(&self, x: f64) -> Result<Gaussian> {
        Gaussian::new(self.slope * x + self.intercept, self.var)
    }

    /// `E_{x ~ over}[KL(self(·|x) || other(·|x))]`.
    pub fn expected_kl(&self, other: &LinearPosterior, over: &Gaussian) -> Result<f64> {
        if !(self.var > 0.0) || !(other.var > 0.0) {
            return Err(Error::NotNormalizable("degenerate conditional".into()));
        }
        let k = self.slope - other.slope;
        let c = self.intercept - other.intercept;
        let mean_sq = (k * over.mean + c).powi(2) + k * k * over.var;
        Ok(0.5 * ((other.var / self.var).ln() + (self.var + mean_sq) / other.var - 1.0))
    }
}

/// `U(x) = θ2 x²/2 − θ1 x`, so that `p_θ = N(θ1/θ2, 1/θ2)` whenever `θ2 > 0`.
#[derive(Clone, Debug)]
pub struct QuadraticEnergy {
    params: ParamStore,
}

fn scalar_store(entries: &[(&str, f64)]) -> Result<ParamStore> {
    let mut p = ParamStore::new();
    for &(name, v) in entries {
        if !v.is_finite() {
            return Err(Error::NonFinite("testbed parameter"));
        }
        p.insert(name, Tensor::vector(vec![v])?)?;
    }
    Ok(p)
}

fn scalar(p: &ParamStore, name: &str) -> f64 {
    p.get(name).map(|t| t.data()[0]).unwrap_or(f64::NAN)
}

fn column(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

impl QuadraticEnergy {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        Ok(Self { params: scalar_store(&[("theta1", theta1), ("theta2", theta2)])? })
    }

    pub fn theta1(&self) -> f64 {
        scalar(&self.params, "theta1")
    }

    pub fn theta2(&self) -> f64 {
        scalar(&self.params, "theta2")
    }

    /// The normalized density; fails unless `θ2 > 0`.
    pub fn density(&self) -> Result<Gaussian> {
        let (t1, t2) = (self.theta1(), self.theta2());
        if !(t2 > 0.0) {
            return Err(Error::NotNormalizable(format!("theta2 = {t2} is not positive")));
        }
        Gaussian::new(t1 / t2, 1.0 / t2)
    }
}

impl EnergyModel for QuadraticEnergy {
    fn data_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn energies(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Vec<f64>> {
        check_batch(x, 1, cond, 0, "energy input")?;
        let (t1, t2) = (self.theta1(), self.theta2());
        Ok(x.data().iter().map(|&v| 0.5 * t2 * v * v - t1 * v).collect())
    }

    fn energies_and_grad(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
    ) -> Result<(Vec<f64>, Tensor)> {
        let u = self.energies(x, cond)?;
        let (t1, t2) = (self.theta1(), self.theta2());
        Ok((u, x.map(|v| t2 * v - t1)))
    }

    fn weighted_param_grad(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
        weights: &[f64],
    ) -> Result<ParamStore> {
        let n = check_batch(x, 1, cond, 0, "energy input")?;
        if weights.len() != n {
            return Err(Error::invalid("one weight per example required"));
        }
        let (mut d1, mut d2) = (0.0, 0.0);
        for (&v, &w) in x.data().iter().zip(weights) {
            d1 -= w * v;
            d2 += w * 0.5 * v * v;
        }
        scalar_store(&[("theta1", d1), ("theta2", d2)])
    }
}

/// `x = a·z + b + σ·ε` with a one-dimensional latent.
#[derive(Clone, Debug)]
pub struct AffineGenerator {
    params: ParamStore,
    sigma: f64,
}

impl AffineGenerator {
    pub fn new(a: f64, b: f64, sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid("sigma must be finite and non-negative"));
        }
        Ok(Self { params: scalar_store(&[("a", a), ("b", b)])?, sigma })
    }

    pub fn a(&self) -> f64 {
        scalar(&self.params, "a")
    }

    pub fn b(&self) -> f64 {
        scalar(&self.params, "b")
    }

    /// `q_α(x) = N(b, a² + σ²)`.
    pub fn marginal(&self) -> Result<Gaussian> {
        let a = self.a();
        Gaussian::new(self.b(), a * a + self.sigma * self.sigma)
    }

    /// Exact posterior `q_α(z|x)` as a function of `x`.
    pub fn posterior(&self) -> Result<LinearPosterior> {
        let (a, b, s2) = (self.a(), self.b(), self.sigma * self.sigma);
        let denom = a * a + s2;
        if !(s2 > 0.0) {
            return Err(Error::NotNormalizable("posterior with sigma = 0".into()));
        }
        Ok(LinearPosterior { slope: a / denom, intercept: -a * b / denom, var: s2 / denom })
    }
}

impl GeneratorModel for AffineGenerator {
    type Trace = Vec<f64>;

    fn latent_dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        check_batch(z, 1, cond, 0, "latent input")?;
        let (a, b) = (self.a(), self.b());
        Ok((z.map(|v| a * v + b), column(z)))
    }

    fn backward(&self, trace: &Vec<f64>, upstream: &Tensor) -> Result<(ParamStore, Tensor)> {
        if upstream.len() != trace.len() {
            return Err(Error::Shape {
                context: "generator upstream",
                expected: vec![trace.len(), 1],
                actual: upstream.shape().to_vec(),
            });
        }
        let (mut da, mut db) = (0.0, 0.0);
        for (&z, &g) in trace.iter().zip(upstream.data()) {
            da += g * z;
            db += g;
        }
        let a = self.a();
        Ok((scalar_store(&[("a", da), ("b", db)])?, upstream.map(|g| a * g)))
    }
}

/// `π(z|x) = N(u·x + c, w²)`, stored with `log w` so the scale stays positive.
#[derive(Clone, Debug)]
pub struct AffineEncoder {
    params: ParamStore,
}

impl AffineEncoder {
    pub fn new(u: f64, c: f64, w: f64) -> Result<Self> {
        if !(w > 0.0) {
            return Err(Error::invalid("encoder scale must be positive"));
        }
        Ok(Self { params: scalar_store(&[("u", u), ("c", c), ("log_w", w.ln())])? })
    }

    pub fn from_posterior(p: &LinearPosterior) -> Result<Self> {
        Self::new(p.slope, p.intercept, p.var.sqrt())
    }

    pub fn u(&self) -> f64 {
        scalar(&self.params, "u")
    }

    pub fn c(&self) -> f64 {
        scalar(&self.params, "c")
    }

    pub fn w(&self) -> f64 {
        scalar(&self.params, "log_w").exp()
    }

    pub fn as_conditional(&self) -> LinearPosterior {
        let w = self.w();
        LinearPosterior { slope: self.u(), intercept: self.c(), var: w * w }
    }
}

impl InferenceModel for AffineEncoder {
    type Trace = Vec<f64>;

    fn latent_dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let n = check_batch(x, 1, cond, 0, "encoder input")?;
        let (u, c) = (self.u(), self.c());
        let logvar = 2.0 * scalar(&self.params, "log_w");
        let mean = Tensor::matrix(n, 1, x.data().iter().map(|&v| u * v + c).collect())?;
        Ok((mean, Tensor::filled(vec![n, 1], logvar), column(x)))
    }

    fn backward(&self, trace: &Vec<f64>, d_mean: &Tensor, d_logvar: &Tensor) -> Result<ParamStore> {
        if d_mean.len() != trace.len() || d_logvar.len() != trace.len() {
            return Err(Error::invalid("encoder upstream does not match the traced batch"));
        }
        let (mut du, mut dc) = (0.0, 0.0);
        for (&x, &g) in trace.iter().zip(d_mean.data()) {
            du += g * x;
            dc += g;
        }
        let dlw = 2.0 * d_logvar.data().iter().sum::<f64>();
        scalar_store(&[("u", du), ("c", dc), ("log_w", dlw)])
    }
}

/// Closed-form densities of a testbed state.
#[derive(Clone, Copy, Debug)]
pub struct TestbedDensities {
    pub data: Gaussian,
    pub p_theta: Gaussian,
    pub q_alpha: Gaussian,
    pub encoder: LinearPosterior,
    pub posterior: LinearPosterior,
}

/// Data `N(m, s²)` and a fixed generator noise level σ.
#[derive(Clone, Copy, Debug)]
pub struct GaussianTestbed {
    pub data: Gaussian,
    pub sigma: f64,
}

impl GaussianTestbed {
    pub fn new(mean: f64, var: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("testbed sigma must be positive"));
        }
        Ok(Self { data: Gaussian::new(mean, var)?, sigma })
    }

    /// The equilibrium where all three models reproduce the data: fails when
    /// `s² <= σ²` since the generator cannot then match the data variance.
    pub fn nash(&self) -> Result<(QuadraticEnergy, AffineGenerator, AffineEncoder)> {
        let (m, s2) = (self.data.mean, self.data.var);
        let extra = s2 - self.sigma * self.sigma;
        if !(extra > 0.0) {
            return Err(Error::invalid(format!(
                "data variance {s2} must exceed sigma^2 = {}",
                self.sigma * self.sigma
            )));
        }
        let energy = QuadraticEnergy::new(m / s2, 1.0 / s2)?;
        let generator = AffineGenerator::new(extra.sqrt(), m, self.sigma)?;
        let encoder = AffineEncoder::from_posterior(&generator.posterior()?)?;
        Ok((energy, generator, encoder))
    }

    pub fn densities(
        &self,
        energy: &QuadraticEnergy,
        generator: &AffineGenerator,
        encoder: &AffineEncoder,
    ) -> Result<TestbedDensities> {
        Ok(TestbedDensities {
            data: self.data,
            p_theta: energy.density()?,
            q_alpha: generator.marginal()?,
            encoder: encoder.as_conditional(),
            posterior: generator.posterior()?,
        })
    }
}

/// Exact action of `steps` Langevin updates on a normal law under a quadratic
/// energy: each step maps `N(μ, V)` to `N(ρμ + δ²θ1/2, ρ²V + δ²)` with
/// `ρ = 1 − δ²θ2/2` (the `δ²` term vanishes with noise disabled).
#[derive(Clone, Copy, Debug)]
pub struct LangevinKernel {
    pub step_size: f64,
    pub steps: usize,
    pub noise: bool,
}

impl LangevinKernel {
    pub fn apply(&self, start: &Gaussian, energy: &QuadraticEnergy) -> Result<Gaussian> {
        let d2 = self.step_size * self.step_size;
        let rho = 1.0 - 0.5 * d2 * energy.theta2();
        let shift = 0.5 * d2 * energy.theta1();
        let (mut m, mut v) = (start.mean, start.var);
        for _ in 0..self.steps {
            m = rho * m + shift;
            v = rho * rho * v + if self.noise { d2 } else { 0.0 };
        }
        Gaussian::new(m, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::infer;
    use crate::rng;

    /// Posterior moments of z given x by brute-force quadrature of p(z)q(x|z).
    fn quadrature_posterior(a: f64, b: f64, sigma: f64, x: f64) -> (f64, f64) {
        let prior = Gaussian::new(0.0, 1.0).unwrap();
        let (lo, hi, n) = (-12.0, 12.0, 200_001);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let z = lo + h * i as f64;
            let lik = Gaussian::new(a * z + b, sigma * sigma).unwrap();
            let w = prior.pdf(z) * lik.pdf(x);
            z0 += w;
            z1 += w * z;
            z2 += w * z * z;
        }
        let mean = z1 / z0;
        (mean, z2 / z0 - mean * mean)
    }

    #[test]
    fn marginal_and_posterior_values() {
        let g = AffineGenerator::new(2.0, 1.0, 1.0).unwrap();
        let q = g.marginal().unwrap();
        assert!((q.mean - 1.0).abs() < 1e-15 && (q.var - 5.0).abs() < 1e-15);
        let post = g.posterior().unwrap().at(3.0).unwrap();
        assert!((post.mean - 0.8).abs() < 1e-15);
        assert!((post.var - 0.2).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_quadrature() {
        for &(a, b, s, x) in &[(2.0, 1.0, 1.0, 3.0), (-0.6, 0.4, 0.3, -1.1), (1.3, -2.0, 0.8, 0.0)] {
            let exact = AffineGenerator::new(a, b, s).unwrap().posterior().unwrap().at(x).unwrap();
            let (m, v) = quadrature_posterior(a, b, s, x);
            assert!((exact.mean - m).abs() < 1e-9, "{a} {b} {s} {x}");
            assert!((exact.var - v).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_limit_inverts_the_map() {
        let g = AffineGenerator::new(2.0, 1.0, 1e-6).unwrap();
        let p = g.posterior().unwrap().at(3.0).unwrap();
        assert!((p.mean - 1.0).abs() < 1e-9);
        assert!(p.var < 1e-12);
        assert!(AffineGenerator::new(2.0, 1.0, 0.0).unwrap().posterior().is_err());
    }

    #[test]
    fn energy_density_and_invalid_precision() {
        let e = QuadraticEnergy::new(2.0, 4.0).unwrap();
        let d = e.density().unwrap();
        assert_eq!((d.mean, d.var), (0.5, 0.25));
        assert!(QuadraticEnergy::new(1.0, 0.0).unwrap().density().is_err());
        assert!(QuadraticEnergy::new(1.0, -1.0).unwrap().density().is_err());
    }

    #[test]
    fn energy_gradients_match_finite_differences() {
        let e = QuadraticEnergy::new(0.7, 1.9).unwrap();
        let x = Tensor::matrix(3, 1, vec![-1.0, 0.2, 2.5]).unwrap();
        let (_, dx) = e.energies_and_grad(&x, None).unwrap();
        let h = 1e-6;
        for (i, &v) in x.data().iter().enumerate() {
            let up = e.energies(&Tensor::vector(vec![v + h]).unwrap(), None).unwrap()[0];
            let dn = e.energies(&Tensor::vector(vec![v - h]).unwrap(), None).unwrap()[0];
            assert!(((up - dn) / (2.0 * h) - dx.data()[i]).abs() < 1e-7);
        }
        let g = e.weighted_param_grad(&x, None, &[1.0, 1.0, 1.0]).unwrap();
        assert!((g.scalar("theta1").unwrap() - -1.7).abs() < 1e-12);
        assert!((g.scalar("theta2").unwrap() - 0.5 * (1.0 + 0.04 + 6.25)).abs() < 1e-12);
    }

    #[test]
    fn nash_point_reproduces_data() {
        let tb = GaussianTestbed::new(1.0, 4.0, 0.5).unwrap();
        let (e, g, enc) = tb.nash().unwrap();
        let d = tb.densities(&e, &g, &enc).unwrap();
        assert!(d.data.kl(&d.p_theta).abs() < 1e-15);
        assert!(d.data.kl(&d.q_alpha).abs() < 1e-15);
        assert!(d.encoder.expected_kl(&d.posterior, &d.data).unwrap().abs() < 1e-14);
        assert!(GaussianTestbed::new(0.0, 0.2, 0.5).unwrap().nash().is_err());
    }

    #[test]
    fn encoder_outputs_and_kl_identities() {
        let enc = AffineEncoder::new(0.4, -0.2, 0.5).unwrap();
        let (mu, v) = infer(&enc, &Tensor::vector(vec![2.0]).unwrap(), None).unwrap();
        assert!((mu.data()[0] - 0.6).abs() < 1e-15);
        assert!((v.data()[0] - 0.25).abs() < 1e-15);
        let a = Gaussian::new(0.3, 2.0).unwrap();
        let b = Gaussian::new(-1.0, 0.5).unwrap();
        assert_eq!(a.kl(&a), 0.0);
        assert!(a.kl(&b) > 0.0);
    }

    #[test]
    fn expected_kl_matches_monte_carlo() {
        let p = LinearPosterior { slope: 0.5, intercept: 0.1, var: 0.3 };
        let q = LinearPosterior { slope: -0.2, intercept: 0.4, var: 0.7 };
        let over = Gaussian::new(0.5, 2.0).unwrap();
        let mut r = rng::stream(5, &[0]);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = over.mean + over.std() * rng::standard_normal(&mut r);
            acc += p.at(x).unwrap().kl(&q.at(x).unwrap());
        }
        let exact = p.expected_kl(&q, &over).unwrap();
        assert!((acc / n as f64 - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn kernel_matches_simulated_chains() {
        let e = QuadraticEnergy::new(0.5, 2.0).unwrap();
        let k = LangevinKernel { step_size: 0.3, steps: 5, noise: true };
        let start = Gaussian::new(2.0, 0.5).unwrap();
        let exact = k.apply(&start, &e).unwrap();
        let mut r = rng::stream(6, &[0]);
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut x = start.mean + start.std() * rng::standard_normal(&mut r);
            for _ in 0..k.steps {
                let grad = e.theta2() * x - e.theta1();
                x = x - 0.5 * k.step_size * k.step_size * grad + k.step_size * rng::standard_normal(&mut r);
            }
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - exact.mean).abs() < 5.0 * (exact.var / n as f64).sqrt());
        assert!((var - exact.var).abs() < 0.02 * exact.var);
    }
}
