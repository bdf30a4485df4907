use crate::error::{Error, Result};
use crate::models::{EnergyModel, GeneratorModel};
use crate::nn::Tensor;

/// Fraction of samples whose nearest center lies within `radius`, per center.
pub fn mode_coverage(samples: &Tensor, centers: &[Vec<f64>], radius: f64) -> Result<Vec<f64>> {
    if centers.is_empty() || !(radius > 0.0) {
        return Err(Error::invalid("mode coverage needs centers and a positive radius"));
    }
    let s = samples.as_batch();
    if s.is_empty() {
        return Ok(vec![0.0; centers.len()]);
    }
    if centers.iter().any(|c| c.len() != s.cols()) {
        return Err(Error::invalid("centers and samples differ in dimension"));
    }
    let mut counts = vec![0usize; centers.len()];
    for row in s.iter_rows() {
        let (best, dist2) = centers
            .iter()
            .map(|c| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        if dist2 <= radius * radius {
            counts[best] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / s.rows() as f64).collect())
}

/// Generator means along `z_η = η·z_l + √(1−η²)·z_r`, `η` uniform on `[0, 1]`
/// with `steps` points; the first output is `g(z_r)`, the last `g(z_l)`.
pub fn latent_interpolate<G: GeneratorModel + ?Sized>(
    g: &G,
    z_l: &[f64],
    z_r: &[f64],
    steps: usize,
    cond: Option<&[f64]>,
) -> Result<Tensor> {
    let d = g.latent_dim();
    if z_l.len() != d || z_r.len() != d {
        return Err(Error::Shape {
            context: "latent_interpolate",
            expected: vec![d],
            actual: vec![z_l.len().max(z_r.len())],
        });
    }
    if steps < 2 {
        return Err(Error::invalid("interpolation needs at least two steps"));
    }
    let mut z = Vec::with_capacity(steps * d);
    for k in 0..steps {
        let eta = k as f64 / (steps - 1) as f64;
        let c = (1.0 - eta * eta).max(0.0).sqrt();
        z.extend(z_l.iter().zip(z_r).map(|(l, r)| eta * l + c * r));
    }
    let z = Tensor::matrix(steps, d, z)?;
    let cond = match cond {
        Some(c) => Some(Tensor::matrix(steps, c.len(), (0..steps).flat_map(|_| c.iter().copied()).collect())?),
        None => None,
    };
    Ok(g.forward(&z, cond.as_ref())?.0)
}

/// Mean `U(x̂) − U(x̃)`.
pub fn energy_gap<E: EnergyModel + ?Sized>(
    m: &E,
    x_hat: &Tensor,
    x_tilde: &Tensor,
    cond: Option<&Tensor>,
) -> Result<f64> {
    if x_hat.is_empty() || x_tilde.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if x_hat.rows() != x_tilde.rows() {
        return Err(Error::invalid("batches differ in size"));
    }
    let a = m.energies(x_hat, cond)?;
    let b = m.energies(x_tilde, cond)?;
    Ok(a.iter().zip(&b).map(|(a, b)| a - b).sum::<f64>() / a.len() as f64)
}
