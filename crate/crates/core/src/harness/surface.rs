use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::network::Network;
use crate::orchestrator::seeds;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Points per axis; odd values include the unperturbed centre.
    pub resolution: usize,
    /// Half-width of the square `[−extent, extent]²`.
    pub extent: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            resolution: 21,
            extent: 1.0,
        }
    }
}

impl GridConfig {
    fn check(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(AlaError::Usage(format!(
                "grid resolution must be at least 3, got {}",
                self.resolution
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(AlaError::Usage("grid extent must be positive".into()));
        }
        Ok(())
    }

    /// Coordinate of grid index `i`; the middle index maps to exactly 0.
    pub fn coord(&self, i: usize) -> f64 {
        let n = (self.resolution - 1) as f64;
        (2.0 * i as f64 - n) / n * self.extent
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.resolution - 1) as f64
    }
}

/// Sum of stencil terms, treated as 0 when it is within rounding of the terms.
fn second_difference(terms: &[f64]) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    if sum.abs() <= 4.0 * f64::EPSILON * scale {
        0.0
    } else {
        sum
    }
}

/// Loss values on a 2-D grid and their Gaussian curvature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub grid: GridConfig,
    /// `values[iy * resolution + ix]`.
    pub values: Vec<f64>,
    /// Curvature at interior points, same row-major order over the interior.
    pub curvature: Vec<f64>,
    pub mean_curvature: f64,
}

impl SurfaceGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.resolution + ix]
    }

    /// Builds a grid from precomputed values.
    pub fn from_values(grid: GridConfig, values: Vec<f64>) -> Result<Self> {
        grid.check()?;
        let n = grid.resolution;
        if values.len() != n * n {
            return Err(AlaError::Shape(format!("{} values for a {n}×{n} grid", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AlaError::NonFinite("surface value".into()));
        }
        let h = grid.spacing();
        let at = |x: usize, y: usize| values[y * n + x];
        let mut curvature = Vec::with_capacity((n - 2) * (n - 2));
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                let lx = (at(x + 1, y) - at(x - 1, y)) / (2.0 * h);
                let ly = (at(x, y + 1) - at(x, y - 1)) / (2.0 * h);
                let lxx = second_difference(&[at(x + 1, y), -2.0 * at(x, y), at(x - 1, y)]) / (h * h);
                let lyy = second_difference(&[at(x, y + 1), -2.0 * at(x, y), at(x, y - 1)]) / (h * h);
                let lxy = second_difference(&[
                    at(x + 1, y + 1),
                    -at(x + 1, y - 1),
                    -at(x - 1, y + 1),
                    at(x - 1, y - 1),
                ]) / (4.0 * h * h);
                let g = 1.0 + lx * lx + ly * ly;
                curvature.push((lxx * lyy - lxy * lxy) / (g * g));
            }
        }
        let mean_curvature = curvature.iter().sum::<f64>() / curvature.len() as f64;
        Ok(SurfaceGrid {
            grid,
            values,
            curvature,
            mean_curvature,
        })
    }

    /// Samples `f(x, y)` on the grid.
    pub fn from_fn(grid: GridConfig, mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<Self> {
        grid.check()?;
        let n = grid.resolution;
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                values.push(f(grid.coord(ix), grid.coord(iy))?);
            }
        }
        Self::from_values(grid, values)
    }
}

/// A random direction over the weights, rescaled so each output unit's
/// incoming vector has the norm of the matching weight column. Biases get 0.
pub fn filter_normalized_direction(net: &Network, rng: &mut impl Rng) -> Vec<Matrix> {
    let mut dir = Vec::with_capacity(net.layers().len() * 2);
    for layer in net.layers() {
        let w = &layer.weight;
        let mut d = Matrix::zeros(w.rows(), w.cols());
        for v in d.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        for c in 0..w.cols() {
            let wn = (0..w.rows()).map(|r| w.get(r, c).powi(2)).sum::<f64>().sqrt();
            let dn = (0..w.rows()).map(|r| d.get(r, c).powi(2)).sum::<f64>().sqrt();
            let s = if dn > 0.0 { wn / dn } else { 0.0 };
            for r in 0..w.rows() {
                d.set(r, c, d.get(r, c) * s);
            }
        }
        dir.push(d);
        dir.push(Matrix::zeros(layer.bias.rows(), layer.bias.cols()));
    }
    dir
}

/// Loss surface of `net` along two filter-normalized directions and its mean
/// Gaussian curvature over interior grid points.
pub fn loss_surface_curvature(
    net: &Network,
    loss: impl Fn(&Network) -> Result<f64>,
    grid: GridConfig,
    seed: u64,
) -> Result<SurfaceGrid> {
    grid.check()?;
    if !net.is_finite() {
        return Err(AlaError::Input("network parameters must be finite".into()));
    }
    let mut rng = seeds::stream(seed, "surface", 0);
    let d1 = filter_normalized_direction(net, &mut rng);
    let d2 = filter_normalized_direction(net, &mut rng);
    let base: Vec<Matrix> = net.params().into_iter().cloned().collect();
    let mut probe = net.clone();
    SurfaceGrid::from_fn(grid, |x, y| {
        for ((p, b), (u, v)) in probe.params_mut().into_iter().zip(&base).zip(d1.iter().zip(&d2)) {
            for (((o, &w), &a), &c) in p.data_mut().iter_mut().zip(b.data()).zip(u.data()).zip(v.data()) {
                *o = w + x * a + y * c;
            }
        }
        loss(&probe)
    })
}
