use rand::Rng;

use super::{check_batch, EnergyModel, GeneratorModel, InferenceModel};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, NetSpec, ParamStore, Precision, Tensor, Trace};

/// Widths of the three dense networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSizes {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub energy_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
}

fn with_cond(x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
    let x = x.as_batch();
    match cond {
        Some(c) => x.concat_cols(&c.as_batch()),
        None => Ok(x),
    }
}

fn leading_cols(t: Tensor, keep: usize) -> Result<Tensor> {
    if t.cols() == keep {
        Ok(t)
    } else {
        Ok(t.split_cols(keep)?.0)
    }
}

/// Energy `U_θ(x)` given by a ReLU network with a scalar head.
#[derive(Clone, Debug)]
pub struct NeuralEnergy {
    net: Mlp,
    data_dim: usize,
    cond_dim: usize,
}

impl NeuralEnergy {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetSpec::mlp(data_dim + cond_dim, hidden, 1, Activation::Relu, None)?;
        Self::from_net(Mlp::init(spec, rng), data_dim)
    }

    pub fn from_net(net: Mlp, data_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() < data_dim {
            return Err(Error::invalid("energy network must map D (+C) inputs to a scalar"));
        }
        let cond_dim = net.input_dim() - data_dim;
        Ok(Self { net, data_dim, cond_dim })
    }

    pub fn with_precision(mut self, p: Precision) -> Self {
        self.net = self.net.with_precision(p);
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl EnergyModel for NeuralEnergy {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn params(&self) -> &ParamStore {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.net.params_mut()
    }

    fn energies(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Vec<f64>> {
        check_batch(x, self.data_dim, cond, self.cond_dim, "energy input")?;
        Ok(self.net.eval(&with_cond(x, cond)?)?.into_data())
    }

    fn energies_and_grad(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
    ) -> Result<(Vec<f64>, Tensor)> {
        let rows = check_batch(x, self.data_dim, cond, self.cond_dim, "energy input")?;
        let (u, trace) = self.net.forward(&with_cond(x, cond)?)?;
        let dx = self.net.grad_input(&trace, &Tensor::filled(vec![rows, 1], 1.0))?;
        let dx = leading_cols(dx, self.data_dim)?.reshape(x.shape().to_vec())?;
        Ok((u.into_data(), dx))
    }

    fn weighted_param_grad(
        &self,
        x: &Tensor,
        cond: Option<&Tensor>,
        weights: &[f64],
    ) -> Result<ParamStore> {
        let rows = check_batch(x, self.data_dim, cond, self.cond_dim, "energy input")?;
        if weights.len() != rows {
            return Err(Error::invalid("one weight per example required"));
        }
        let (_, trace) = self.net.forward(&with_cond(x, cond)?)?;
        self.net
            .grad_params(&trace, &Tensor::matrix(rows, 1, weights.to_vec())?)
    }
}

/// Generator `g_α(z)` with ReLU hidden layers and a tanh output head.
#[derive(Clone, Debug)]
pub struct NeuralGenerator {
    net: Mlp,
    latent_dim: usize,
    sigma: f64,
}

impl NeuralGenerator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        data_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetSpec::mlp(
            latent_dim + cond_dim,
            hidden,
            data_dim,
            Activation::Relu,
            Some(Activation::Tanh),
        )?;
        Self::from_net(Mlp::init(spec, rng), latent_dim, sigma)
    }

    pub fn from_net(net: Mlp, latent_dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("generator sigma must be finite and non-negative"));
        }
        if net.input_dim() < latent_dim {
            return Err(Error::invalid("generator network narrower than latent dimension"));
        }
        Ok(Self { net, latent_dim, sigma })
    }

    pub fn with_precision(mut self, p: Precision) -> Self {
        self.net = self.net.with_precision(p);
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl GeneratorModel for NeuralGenerator {
    type Trace = Trace;

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn data_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn cond_dim(&self) -> usize {
        self.net.input_dim() - self.latent_dim
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn params(&self) -> &ParamStore {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.net.params_mut()
    }

    fn forward(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Trace)> {
        check_batch(z, self.latent_dim, cond, self.cond_dim(), "latent input")?;
        self.net.forward(&with_cond(z, cond)?)
    }

    fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<(ParamStore, Tensor)> {
        let (g, dz) = self.net.backward(trace, upstream)?;
        Ok((g, leading_cols(dz, self.latent_dim)?))
    }
}

/// Encoder producing `(μ_β(x), log v_β(x))` from one ReLU network with a
/// `2d`-wide linear head.
#[derive(Clone, Debug)]
pub struct NeuralEncoder {
    net: Mlp,
    data_dim: usize,
}

impl NeuralEncoder {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        latent_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetSpec::mlp(data_dim + cond_dim, hidden, 2 * latent_dim, Activation::Relu, None)?;
        Self::from_net(Mlp::init(spec, rng), data_dim)
    }

    pub fn from_net(net: Mlp, data_dim: usize) -> Result<Self> {
        if !net.output_dim().is_multiple_of(2) || net.input_dim() < data_dim {
            return Err(Error::invalid("encoder head must have even width"));
        }
        Ok(Self { net, data_dim })
    }

    pub fn with_precision(mut self, p: Precision) -> Self {
        self.net = self.net.with_precision(p);
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl InferenceModel for NeuralEncoder {
    type Trace = Trace;

    fn latent_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn cond_dim(&self) -> usize {
        self.net.input_dim() - self.data_dim
    }

    fn params(&self) -> &ParamStore {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.net.params_mut()
    }

    fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Tensor, Trace)> {
        check_batch(x, self.data_dim, cond, self.cond_dim(), "encoder input")?;
        let (out, trace) = self.net.forward(&with_cond(x, cond)?)?;
        let (mu, logvar) = out.split_cols(self.latent_dim())?;
        Ok((mu, logvar, trace))
    }

    fn backward(&self, trace: &Trace, d_mean: &Tensor, d_logvar: &Tensor) -> Result<ParamStore> {
        let upstream = d_mean.as_batch().concat_cols(&d_logvar.as_batch())?;
        self.net.grad_params(trace, &upstream)
    }
}
