//! Figure material: point sets as CSV plus simple raster plots (scatter,
//! density heatmap, Langevin frame strips, interpolation strips).

use std::path::Path;

use crate::diagnostics::{grid_masses, GridSpec};
use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::nn::Tensor;

use super::Image;

pub const DATA_COLOR: [u8; 3] = [40, 40, 40];
pub const INITIAL_COLOR: [u8; 3] = [30, 100, 220];
pub const REVISED_COLOR: [u8; 3] = [220, 50, 40];

pub fn write_points_csv(path: &Path, points: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let header: Vec<String> = (0..points.cols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for row in points.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_points_csv(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number `{s}`", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

fn white(size: usize) -> Result<Image> {
    let mut img = Image::new(size, size, 3)?;
    img.data.fill(255);
    Ok(img)
}

fn pixel(v: f64, lo: f64, hi: f64, size: usize) -> Option<usize> {
    let t = (v - lo) / (hi - lo);
    (0.0..=1.0).contains(&t).then(|| ((t * (size - 1) as f64).round()) as usize)
}

/// Scatter plot of the first two columns of each point set over the square
/// `[lo, hi]²`. One-dimensional sets are drawn along the horizontal midline.
pub fn scatter(sets: &[(&Tensor, [u8; 3])], lo: f64, hi: f64, size: usize) -> Result<Image> {
    if hi <= lo {
        return Err(Error::invalid("scatter bounds must satisfy lo < hi"));
    }
    let mut img = white(size)?;
    for (pts, color) in sets {
        for row in pts.iter_rows() {
            let x = pixel(row[0], lo, hi, size);
            let y = match row.get(1) {
                Some(&v) => pixel(v, lo, hi, size).map(|p| size - 1 - p),
                None => Some(size / 2),
            };
            if let (Some(x), Some(y)) = (x, y) {
                img.put(x, y, *color);
                img.put(x + 1, y, *color);
                img.put(x, y + 1, *color);
                img.put(x + 1, y + 1, *color);
            }
        }
    }
    Ok(img)
}

/// exp(−U)/Z on a two-dimensional grid, scaled so the largest node is white.
pub fn heatmap<E: EnergyModel + ?Sized>(m: &E, grid: &GridSpec) -> Result<Image> {
    if grid.dims() != 2 {
        return Err(Error::Unsupported("heatmaps need two-dimensional data".into()));
    }
    let masses = grid_masses(m, grid)?;
    let max = masses.iter().copied().fold(0.0, f64::max);
    let (nx, ny) = (grid.resolution[0], grid.resolution[1]);
    let mut values = vec![0.0; nx * ny];
    for (flat, mass) in masses.iter().enumerate() {
        let (i, j) = (flat / ny, flat % ny);
        values[(ny - 1 - j) * nx + i] = if max > 0.0 { mass / max } else { 0.0 };
    }
    Image::from_unit_gray(nx, ny, &values)
}

/// Places images side by side on a white background, top-aligned.
pub fn hconcat(images: &[Image]) -> Result<Image> {
    let width: usize = images.iter().map(|i| i.width).sum();
    let height = images.iter().map(|i| i.height).max().unwrap_or(0);
    let mut out = Image::new(width, height, 3)?;
    out.data.fill(255);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                let at = (y * img.width + x) * img.channels;
                let rgb = if img.channels == 1 {
                    [img.data[at]; 3]
                } else {
                    [img.data[at], img.data[at + 1], img.data[at + 2]]
                };
                out.put(x0 + x, y, rgb);
            }
        }
        x0 += img.width;
    }
    Ok(out)
}

/// One scatter panel per Langevin frame.
pub fn frame_strip(frames: &[Tensor], lo: f64, hi: f64, size: usize) -> Result<Image> {
    let panels = frames
        .iter()
        .map(|f| scatter(&[(f, REVISED_COLOR)], lo, hi, size))
        .collect::<Result<Vec<_>>>()?;
    hconcat(&panels)
}

/// Renders each row of `rows` as a `patch × patch` gray tile (values in
/// `[−1, 1]`) and lays the tiles out left to right.
pub fn patch_strip(rows: &Tensor, patch: usize) -> Result<Image> {
    if rows.cols() != patch * patch {
        return Err(Error::invalid(format!(
            "rows of length {} are not {patch}×{patch} patches",
            rows.cols()
        )));
    }
    let tiles = rows
        .iter_rows()
        .map(|r| {
            let unit: Vec<f64> = r.iter().map(|v| 0.5 * (v + 1.0)).collect();
            Image::from_unit_gray(patch, patch, &unit)
        })
        .collect::<Result<Vec<_>>>()?;
    hconcat(&tiles)
}
