use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::annotations::Point;
use crate::{Error, Result};

/// Default Gaussian scale for pseudo-density targets, in pixels.
pub const DEFAULT_SIGMA: f64 = 4.0;
/// Kernel support radius in units of sigma.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

/// Non-negative `height x width` grid whose sum equals the number of points
/// it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoDensityMap {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub grid: Vec<f64>,
}

impl PseudoDensityMap {
    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }
}

/// Places a truncated isotropic Gaussian at every point and sums them.
///
/// Pixel `(i, j)` is sampled at its centre `(j + 0.5, i + 0.5)`. Each kernel
/// is cut at `4 sigma` and at the frame border, then rescaled so the part that
/// remains carries unit mass.
pub fn generate_pseudo_density(points: &[Point], height: usize, width: usize, sigma: f64) -> Result<PseudoDensityMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain { op: "pseudo_density", detail: format!("sigma must be positive, got {sigma}") });
    }
    if let Some(p) = points.iter().find(|p| !p.in_bounds(width, height)) {
        return Err(Error::Domain {
            op: "pseudo_density",
            detail: format!("point ({}, {}) outside {width}x{height}", p.x, p.y),
        });
    }
    let mut grid = vec![0.0; height * width];
    let radius = TRUNCATE_SIGMAS * sigma;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::new();
    for p in points {
        let y_lo = libm::floor(p.y - radius - 0.5).max(0.0) as usize;
        let y_hi = (libm::ceil(p.y + radius - 0.5) as usize).min(height - 1);
        let x_lo = libm::floor(p.x - radius - 0.5).max(0.0) as usize;
        let x_hi = (libm::ceil(p.x + radius - 0.5) as usize).min(width - 1);
        kernel.clear();
        let mut mass = 0.0;
        for i in y_lo..=y_hi {
            let dy = i as f64 + 0.5 - p.y;
            for j in x_lo..=x_hi {
                let dx = j as f64 + 0.5 - p.x;
                let d2 = dx * dx + dy * dy;
                if d2 <= radius * radius {
                    let w = libm::exp(-d2 * inv_two_var);
                    mass += w;
                    kernel.push((i * width + j, w));
                }
            }
        }
        if mass > 0.0 {
            for &(at, w) in &kernel {
                grid[at] += w / mass;
            }
        } else {
            // every tap underflowed: put the unit on the containing pixel
            grid[p.y as usize * width + p.x as usize] += 1.0;
        }
    }
    Ok(PseudoDensityMap { height, width, sigma, grid })
}
