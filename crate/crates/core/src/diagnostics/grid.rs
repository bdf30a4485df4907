use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::nn::Tensor;

/// Tensor-product quadrature grid; `resolution` counts nodes per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(bounds: Vec<(f64, f64)>, resolution: Vec<usize>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != resolution.len() {
            return Err(Error::invalid("one bound pair and one resolution per dimension"));
        }
        for &(lo, hi) in &bounds {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                return Err(Error::invalid(format!("bad grid bounds [{lo}, {hi}]")));
            }
        }
        if resolution.iter().any(|&r| r < 16) {
            return Err(Error::invalid("grid resolution must be at least 16"));
        }
        Ok(Self { bounds, resolution })
    }

    /// Same bounds and resolution in every one of `dims` dimensions.
    pub fn square(dims: usize, lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        Self::new(vec![(lo, hi); dims], vec![resolution; dims])
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_dims(&self) -> Result<()> {
        if self.dims() > 2 {
            return Err(Error::Unsupported(format!(
                "grid quadrature in {} dimensions (at most 2)",
                self.dims()
            )));
        }
        Ok(())
    }

    pub fn spacing(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (hi - lo) / (self.resolution[dim] - 1) as f64
    }

    pub fn axis(&self, dim: usize) -> Vec<f64> {
        let (lo, _) = self.bounds[dim];
        let h = self.spacing(dim);
        (0..self.resolution[dim]).map(|i| lo + h * i as f64).collect()
    }

    /// All nodes, row-major with the last dimension varying fastest.
    pub fn points(&self) -> Result<Tensor> {
        self.check_dims()?;
        let axes: Vec<Vec<f64>> = (0..self.dims()).map(|d| self.axis(d)).collect();
        let mut data = Vec::with_capacity(self.len() * self.dims());
        for flat in 0..self.len() {
            for (d, v) in self.unravel(flat).into_iter().enumerate() {
                data.push(axes[d][v]);
            }
        }
        Tensor::matrix(self.len(), self.dims(), data)
    }

    fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            idx[d] = flat % self.resolution[d];
            flat /= self.resolution[d];
        }
        idx
    }

    /// Trapezoid weights for every node.
    pub fn weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.dims())
            .map(|d| {
                let n = self.resolution[d];
                let h = self.spacing(d);
                (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
            })
            .collect();
        (0..self.len())
            .map(|flat| {
                self.unravel(flat)
                    .iter()
                    .enumerate()
                    .map(|(d, &i)| per_axis[d][i])
                    .product()
            })
            .collect()
    }

    /// Index of the node nearest to `x` (points outside the grid map to the
    /// nearest boundary node).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (d, &v) in x.iter().enumerate() {
            let (lo, _) = self.bounds[d];
            let n = self.resolution[d];
            let i = ((v - lo) / self.spacing(d)).round().clamp(0.0, (n - 1) as f64) as usize;
            flat = flat * n + i;
        }
        flat
    }
}

pub(crate) fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Energies at every grid node, evaluated in chunks.
pub fn grid_energies<E: EnergyModel + ?Sized>(
    m: &E,
    grid: &GridSpec,
    cond: Option<&[f64]>,
) -> Result<Vec<f64>> {
    grid.check_dims()?;
    if grid.dims() != m.data_dim() {
        return Err(Error::invalid("grid and model dimensions differ"));
    }
    let pts = grid.points()?;
    let mut out = Vec::with_capacity(grid.len());
    let chunk = 4096;
    let mut start = 0;
    while start < grid.len() {
        let end = (start + chunk).min(grid.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = pts.select_rows(&idx)?;
        let c = match cond {
            Some(c) => Some(Tensor::matrix(
                idx.len(),
                c.len(),
                idx.iter().flat_map(|_| c.iter().copied()).collect(),
            )?),
            None => None,
        };
        out.extend(m.energies(&x, c.as_ref())?);
        start = end;
    }
    Ok(out)
}

/// `log ∫ exp(−U)` by the trapezoid rule on the grid.
pub fn grid_log_partition<E: EnergyModel + ?Sized>(m: &E, grid: &GridSpec) -> Result<f64> {
    let u = grid_energies(m, grid, None)?;
    let terms: Vec<f64> = u.iter().zip(grid.weights()).map(|(u, w)| w.ln() - u).collect();
    let z = logsumexp(&terms);
    if !z.is_finite() {
        return Err(Error::NotNormalizable("grid partition function is not finite".into()));
    }
    Ok(z)
}

/// Probability mass of each grid node under the grid-normalized `exp(−U)`.
pub fn grid_masses<E: EnergyModel + ?Sized>(m: &E, grid: &GridSpec) -> Result<Vec<f64>> {
    let u = grid_energies(m, grid, None)?;
    let terms: Vec<f64> = u.iter().zip(grid.weights()).map(|(u, w)| w.ln() - u).collect();
    let z = logsumexp(&terms);
    if !z.is_finite() {
        return Err(Error::NotNormalizable("grid partition function is not finite".into()));
    }
    Ok(terms.iter().map(|t| (t - z).exp()).collect())
}

/// Normalized histogram of `samples` on the grid nodes with half a count
/// added to every node.
pub fn histogram(samples: &Tensor, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.check_dims()?;
    let s = samples.as_batch();
    if s.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    if s.cols() != grid.dims() {
        return Err(Error::invalid("sample and grid dimensions differ"));
    }
    let mut counts = vec![0.5; grid.len()];
    for row in s.iter_rows() {
        counts[grid.nearest(row)] += 1.0;
    }
    let total = s.rows() as f64 + 0.5 * grid.len() as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Masses of a density (not necessarily normalized) on the grid.
pub fn density_masses(density: &dyn Fn(&[f64]) -> f64, grid: &GridSpec) -> Result<Vec<f64>> {
    let pts = grid.points()?;
    let raw: Vec<f64> = pts
        .iter_rows()
        .zip(grid.weights())
        .map(|(x, w)| w * density(x))
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NotNormalizable("density has no mass on the grid".into()));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// `Σ p log(p/q)` over cells, skipping cells where `p` is zero.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("distributions have different supports"));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Reference distribution for [`grid_kl`].
pub enum KlSource<'a> {
    Samples(&'a Tensor),
    Density(&'a dyn Fn(&[f64]) -> f64),
}

/// `KL(source || p_θ)` with both sides discretized on the grid.
pub fn grid_kl<E: EnergyModel + ?Sized>(
    source: KlSource<'_>,
    m: &E,
    grid: &GridSpec,
) -> Result<f64> {
    let p = match source {
        KlSource::Samples(s) => histogram(s, grid)?,
        KlSource::Density(f) => density_masses(f, grid)?,
    };
    discrete_kl(&p, &grid_masses(m, grid)?)
}
