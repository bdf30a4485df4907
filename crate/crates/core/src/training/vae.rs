use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GeneratorModel, InferenceModel};
use crate::nn::{ParamStore, Tensor};
use crate::rng::{self, tag};

/// How the reconstruction expectation `E_π[−log q(x|z)]` is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ElboEstimator {
    /// Average over `draws` reparameterized samples per example.
    Reparameterized { draws: usize },
    /// Gauss–Hermite quadrature with `nodes` points; one-dimensional latents
    /// only. Exact for generators that are polynomial in `z` of degree
    /// below `nodes`.
    GaussHermite { nodes: usize },
}

impl Default for ElboEstimator {
    fn default() -> Self {
        ElboEstimator::Reparameterized { draws: 1 }
    }
}

/// Negative ELBO averaged over the batch, with gradients for both networks.
#[derive(Clone, Debug)]
pub struct VaeLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    /// Per-example loss terms (reconstruction + γ·KL).
    pub per_example: Vec<f64>,
    pub grad_generator: ParamStore,
    pub grad_encoder: ParamStore,
}

/// `½ Σ_j (v_j + μ_j² − 1 − log v_j)` per row.
pub fn kl_diag_gaussian_to_prior(mu: &Tensor, v: &Tensor) -> Result<Vec<f64>> {
    if mu.shape() != v.shape() {
        return Err(Error::Shape {
            context: "kl_diag_gaussian_to_prior",
            expected: mu.shape().to_vec(),
            actual: v.shape().to_vec(),
        });
    }
    if !v.data().iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("variance must be positive"));
    }
    let (mu, v) = (mu.as_batch(), v.as_batch());
    Ok(mu
        .iter_rows()
        .zip(v.iter_rows())
        .map(|(m, s)| {
            0.5 * m.iter().zip(s).map(|(m, s)| s + m * m - 1.0 - s.ln()).sum::<f64>()
        })
        .collect())
}

/// Nodes and weights for `E[f(ε)]`, `ε ~ N(0, 1)`; the weights sum to one.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 100 {
        return Err(Error::invalid("Gauss-Hermite order must be in 1..=100"));
    }
    // Newton iteration on the orthonormal Hermite recurrence for the weight
    // exp(-t^2), then map t -> sqrt(2) t.
    let pim4 = PI.powf(-0.25);
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt_pi = PI.sqrt();
    let mut nodes: Vec<f64> = t.iter().map(|&x| std::f64::consts::SQRT_2 * x).collect();
    let mut weights: Vec<f64> = w.iter().map(|&x| x / sqrt_pi).collect();
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

/// Latent noise and weights for every example: `eps[i][k]` is a vector of
/// length `d`, `weight[k]` its weight within the example.
fn latent_noise(
    estimator: ElboEstimator,
    batch: usize,
    d: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    match estimator {
        ElboEstimator::Reparameterized { draws } => {
            if draws == 0 {
                return Err(Error::invalid("at least one reparameterized draw required"));
            }
            let mut eps = vec![0.0; batch * draws * d];
            for i in 0..batch {
                let mut r = rng::stream(seed, &[tag::REPARAM, i as u64]);
                rng::fill_standard_normal(&mut r, &mut eps[i * draws * d..(i + 1) * draws * d]);
            }
            Ok((eps, vec![1.0 / draws as f64; draws], draws))
        }
        ElboEstimator::GaussHermite { nodes } => {
            if d != 1 {
                return Err(Error::Unsupported(format!(
                    "Gauss-Hermite ELBO needs a 1-D latent, got {d}"
                )));
            }
            let (x, w) = gauss_hermite(nodes)?;
            let eps = (0..batch).flat_map(|_| x.iter().copied()).collect();
            Ok((eps, w, nodes))
        }
    }
}

fn repeat_rows(t: &Tensor, times: usize) -> Result<Tensor> {
    let t = t.as_batch();
    let idx: Vec<usize> = (0..t.rows()).flat_map(|i| std::iter::repeat_n(i, times)).collect();
    t.select_rows(&idx)
}

/// Negative ELBO `E_π[−log q_α(x|z)] + γ·KL(π_β(z|x) || N(0, I))`, averaged
/// over the batch. `x` is treated as fixed data.
pub fn vae_loss<G, I>(
    g: &G,
    e: &I,
    x: &Tensor,
    cond: Option<&Tensor>,
    gamma: f64,
    estimator: ElboEstimator,
    seed: u64,
) -> Result<VaeLoss>
where
    G: GeneratorModel + ?Sized,
    I: InferenceModel + ?Sized,
{
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be non-negative"));
    }
    let sigma = g.sigma();
    if !(sigma > 0.0) {
        return Err(Error::invalid("the variational loss needs sigma > 0"));
    }
    let x = x.as_batch();
    let n = x.rows();
    let dim = x.cols();
    let d = e.latent_dim();
    let (mu, logvar, enc_trace) = e.forward(&x, cond)?;
    let v = logvar.map(f64::exp);
    if !v.data().iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::NonFinite("encoder variance"));
    }
    let std = v.map(f64::sqrt);
    let kl = kl_diag_gaussian_to_prior(&mu, &v)?;

    let (eps, weights, k) = latent_noise(estimator, n, d, seed)?;
    let mut z = vec![0.0; n * k * d];
    for i in 0..n {
        for kk in 0..k {
            for j in 0..d {
                let at = (i * k + kk) * d + j;
                z[at] = mu.row(i)[j] + std.row(i)[j] * eps[at];
            }
        }
    }
    let z = Tensor::matrix(n * k, d, z)?;
    let cond_rep = cond.map(|c| repeat_rows(c, k)).transpose()?;
    let (mean, gen_trace) = g.forward(&z, cond_rep.as_ref())?;

    let s2 = sigma * sigma;
    let norm = 0.5 * dim as f64 * (2.0 * PI * s2).ln();
    let inv_n = 1.0 / n as f64;
    let mut recon = vec![0.0; n];
    let mut upstream = vec![0.0; n * k * dim];
    for i in 0..n {
        for (kk, &w) in weights.iter().enumerate() {
            let r = i * k + kk;
            let mut sq = 0.0;
            for c in 0..dim {
                let diff = mean.row(r)[c] - x.row(i)[c];
                sq += diff * diff;
                upstream[r * dim + c] = w * inv_n * diff / s2;
            }
            recon[i] += w * (norm + sq / (2.0 * s2));
        }
    }
    let (grad_generator, dz) = g.backward(&gen_trace, &Tensor::matrix(n * k, dim, upstream)?)?;

    let mut d_mu = vec![0.0; n * d];
    let mut d_logvar = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let at = i * d + j;
            let (m, var, s) = (mu.row(i)[j], v.row(i)[j], std.row(i)[j]);
            let (mut gm, mut gl) = (0.0, 0.0);
            for kk in 0..k {
                let r = (i * k + kk) * d + j;
                gm += dz.data()[r];
                gl += dz.data()[r] * eps[r] * 0.5 * s;
            }
            d_mu[at] = gm + gamma * inv_n * m;
            d_logvar[at] = gl + gamma * inv_n * 0.5 * (var - 1.0);
        }
    }
    let grad_encoder = e.backward(
        &enc_trace,
        &Tensor::matrix(n, d, d_mu)?,
        &Tensor::matrix(n, d, d_logvar)?,
    )?;

    let per_example: Vec<f64> = recon.iter().zip(&kl).map(|(r, k)| r + gamma * k).collect();
    let loss = per_example.iter().sum::<f64>() * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("variational loss"));
    }
    Ok(VaeLoss {
        loss,
        recon: recon.iter().sum::<f64>() * inv_n,
        kl: kl.iter().sum::<f64>() * inv_n,
        per_example,
        grad_generator,
        grad_encoder,
    })
}
