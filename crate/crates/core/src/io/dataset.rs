//! Synthetic datasets scaled to `[−1, 1]^D`, plus grayscale image patches.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use super::config::DatasetConfig;
use super::image::Image;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{self, tag};

/// Generated data; paired datasets also carry the condition `y` for each row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub cond: Option<Tensor>,
    /// Component centers, for mixture datasets.
    pub centers: Option<Vec<Vec<f64>>>,
}

pub const KINDS: &[&str] = &[
    "gaussian_grid",
    "ring",
    "two_spirals",
    "checkerboard",
    "patches",
    "two_branch",
    "ring_slice",
];

/// Component centers of the `rows × cols` mixture: a square lattice centered
/// at the origin whose longer side spans `[−0.75, 0.75]`.
pub fn grid_centers(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let longest = rows.max(cols);
    let h = if longest > 1 { 1.5 / (longest - 1) as f64 } else { 0.0 };
    let axis = |n: usize| (0..n).map(move |i| (i as f64 - 0.5 * (n - 1) as f64) * h);
    axis(rows).flat_map(|y| axis(cols).map(move |x| vec![x, y])).collect()
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

fn check_positive(key: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::ConfigValue { key: format!("dataset.{key}"), reason: "must be finite and non-negative".into() });
    }
    Ok(())
}

pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
    generate_n(cfg, cfg.n, cfg.seed)
}

/// `n` examples from the configured dataset using stream `seed`.
pub fn generate_n(cfg: &DatasetConfig, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let mut r = rng::stream(seed, &[tag::DATASET]);
    let normal = |r: &mut rand_chacha::ChaCha8Rng| rng::standard_normal(r);
    let pairs = |data: Vec<f64>| Tensor::matrix(n, 2, data);
    match cfg.kind.as_str() {
        "gaussian_grid" => {
            if cfg.rows == 0 || cfg.cols == 0 {
                return Err(Error::ConfigValue { key: "dataset.rows".into(), reason: "rows and cols must be positive".into() });
            }
            check_positive("std", cfg.std)?;
            let centers = grid_centers(cfg.rows, cfg.cols);
            let mut data = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let c = &centers[r.random_range(0..centers.len())];
                data.push(clamp_unit(c[0] + cfg.std * normal(&mut r)));
                data.push(clamp_unit(c[1] + cfg.std * normal(&mut r)));
            }
            Ok(Dataset { x: pairs(data)?, cond: None, centers: Some(centers) })
        }
        "ring" => {
            check_positive("noise", cfg.noise)?;
            let mut data = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let a = r.random_range(0.0..2.0 * PI);
                let rad = cfg.radius + cfg.noise * normal(&mut r);
                data.push(clamp_unit(rad * a.cos()));
                data.push(clamp_unit(rad * a.sin()));
            }
            Ok(Dataset { x: pairs(data)?, cond: None, centers: None })
        }
        "two_spirals" => {
            check_positive("noise", cfg.noise)?;
            let mut data = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let t: f64 = r.random_range(0.05..1.0);
                let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                let a = 2.0 * PI * cfg.turns * t;
                let rad = cfg.radius * t;
                data.push(clamp_unit(sign * rad * a.cos() + cfg.noise * normal(&mut r)));
                data.push(clamp_unit(sign * rad * a.sin() + cfg.noise * normal(&mut r)));
            }
            Ok(Dataset { x: pairs(data)?, cond: None, centers: None })
        }
        "checkerboard" => {
            let k = cfg.cells;
            if k < 2 {
                return Err(Error::ConfigValue { key: "dataset.cells".into(), reason: "needs at least 2 cells per side".into() });
            }
            let dark: Vec<(usize, usize)> =
                (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).filter(|(i, j)| (i + j) % 2 == 0).collect();
            let w = 2.0 / k as f64;
            let mut data = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let (i, j) = dark[r.random_range(0..dark.len())];
                data.push(-1.0 + w * (j as f64 + r.random::<f64>()));
                data.push(-1.0 + w * (i as f64 + r.random::<f64>()));
            }
            Ok(Dataset { x: pairs(data)?, cond: None, centers: None })
        }
        "patches" => {
            let dir = cfg.dir.as_deref().ok_or_else(|| Error::ConfigValue {
                key: "dataset.dir".into(),
                reason: "patches need an image directory".into(),
            })?;
            let x = patches(dir, cfg.patch_size, n, &mut r)?;
            Ok(Dataset { x, cond: None, centers: None })
        }
        "two_branch" => {
            check_positive("noise", cfg.noise)?;
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let yi: f64 = r.random_range(-1.0..1.0);
                let b = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                x.push(clamp_unit(two_branch_mean(yi, b) + cfg.noise * normal(&mut r)));
                y.push(yi);
            }
            Ok(Dataset { x: Tensor::matrix(n, 1, x)?, cond: Some(Tensor::matrix(n, 1, y)?), centers: None })
        }
        "ring_slice" => {
            let ring = generate_n(&DatasetConfig { kind: "ring".into(), ..cfg.clone() }, n, seed)?;
            let y: Vec<f64> = ring.x.iter_rows().map(|p| p[0]).collect();
            Ok(Dataset { x: ring.x, cond: Some(Tensor::matrix(n, 1, y)?), centers: None })
        }
        other => Err(Error::ConfigValue {
            key: "dataset.kind".into(),
            reason: format!("unknown kind `{other}` (expected one of {})", KINDS.join(", ")),
        }),
    }
}

/// Noise-free value of branch `b = ±1` at condition `y` in the two-branch
/// dataset.
pub fn two_branch_mean(y: f64, b: f64) -> f64 {
    0.5 * b + 0.3 * y
}

fn patches<R: Rng>(dir: &Path, size: usize, n: usize, r: &mut R) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::ConfigValue { key: "dataset.patch_size".into(), reason: "must be positive".into() });
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            matches!(ext.as_str(), "pgm" | "ppm" | "pnm" | "png")
        })
        .collect();
    files.sort();
    let images: Vec<Image> = files
        .iter()
        .map(|p| Image::read(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|img| img.width >= size && img.height >= size)
        .collect();
    if images.is_empty() {
        return Err(Error::Format(format!(
            "{}: no readable images of at least {size}x{size} pixels",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(n * size * size);
    for _ in 0..n {
        let img = &images[r.random_range(0..images.len())];
        let x0 = r.random_range(0..=img.width - size);
        let y0 = r.random_range(0..=img.height - size);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                data.push(2.0 * img.gray(x, y) - 1.0);
            }
        }
    }
    Tensor::matrix(n, size * size, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: &str) -> DatasetConfig {
        DatasetConfig { kind: kind.into(), n: 10_000, ..Default::default() }
    }

    #[test]
    fn single_component_moments() {
        let c = DatasetConfig { rows: 1, cols: 1, std: 0.1, ..cfg("gaussian_grid") };
        let d = generate(&c).unwrap();
        let n = d.x.rows() as f64;
        for col in 0..2 {
            let v: Vec<f64> = d.x.iter_rows().map(|r| r[col]).collect();
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            assert!(m.abs() < 3.0 * 0.1 / n.sqrt());
            assert!((var - 0.01).abs() < 3.0 * 0.01 * (2.0 / (n - 1.0)).sqrt());
        }
    }

    #[test]
    fn noiseless_ring_has_unit_norm() {
        let c = DatasetConfig { radius: 1.0, noise: 0.0, ..cfg("ring") };
        let d = generate(&c).unwrap();
        assert!(d.x.iter_rows().all(|p| ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn all_kinds_are_deterministic_and_bounded() {
        for kind in ["gaussian_grid", "ring", "two_spirals", "checkerboard", "two_branch", "ring_slice"] {
            let a = generate(&cfg(kind)).unwrap();
            assert_eq!(a, generate(&cfg(kind)).unwrap());
            assert!(a.x.data().iter().all(|v| (-1.0..=1.0).contains(v)), "{kind}");
            assert_ne!(a.x, generate(&DatasetConfig { seed: 1, ..cfg(kind) }).unwrap().x);
        }
        assert!(generate(&cfg("moons")).is_err());
    }

    #[test]
    fn eight_mode_centers() {
        let c = grid_centers(2, 4);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], vec![-0.75, -0.25]);
        assert_eq!(c[7], vec![0.75, 0.25]);
        let square = grid_centers(3, 3);
        assert_eq!(square[0], vec![-0.75, -0.75]);
        assert_eq!(square[4], vec![0.0, 0.0]);
    }

    #[test]
    fn patches_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_unit_gray(4, 4, &(0..16).map(|i| i as f64 / 15.0).collect::<Vec<_>>()).unwrap();
        img.write_pnm(&dir.path().join("a.pgm")).unwrap();
        let c = DatasetConfig { dir: Some(dir.path().to_path_buf()), patch_size: 2, n: 50, ..cfg("patches") };
        let d = generate(&c).unwrap();
        assert_eq!(d.x.shape(), &[50, 4]);
        assert!(d.x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let missing = DatasetConfig { dir: Some(dir.path().join("nope")), ..c };
        assert!(generate(&missing).is_err());
    }

    #[test]
    fn two_branch_pairs() {
        let d = generate(&DatasetConfig { noise: 0.0, ..cfg("two_branch") }).unwrap();
        let y = d.cond.unwrap();
        for (x, y) in d.x.data().iter().zip(y.data()) {
            let near = [-1.0, 1.0].iter().any(|&b| (two_branch_mean(*y, b) - x).abs() < 1e-12);
            assert!(near);
        }
    }
}
