//! Spatial α patterns fed to grid models.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RiskError};
use crate::grid::RiskGrid;

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(grid: &RiskGrid, sigma: f64) -> RiskGrid {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = grid.shape();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        j as usize
    };
    let pass = |src: &RiskGrid, horizontal: bool| {
        RiskGrid::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| {
                    let o = k as isize - radius;
                    let v = if horizontal {
                        src.get(reflect(x as isize + o, w), y)
                    } else {
                        src.get(x, reflect(y as isize + o, h))
                    };
                    kv * v
                })
                .sum()
        })
    };
    pass(&pass(grid, true), false)
}

/// Blurred white noise mapped to a uniform marginal on `[0, 1]`.
///
/// Values are replaced by their normalized rank, so the field keeps the
/// spatial structure of the blur while its histogram is flat and spans
/// exactly `[0, 1]`.
pub fn smoothed_alpha_field<R: Rng + ?Sized>(width: usize, height: usize, sigma: f64, rng: &mut R) -> RiskGrid {
    let noise = RiskGrid::from_vec(width, height, (0..width * height).map(|_| rng.sample(StandardNormal)).collect())
        .expect("sized noise");
    let blurred = gaussian_blur(&noise, sigma);
    rank_uniform(&blurred)
}

fn rank_uniform(grid: &RiskGrid) -> RiskGrid {
    let n = grid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| grid.data()[a].total_cmp(&grid.data()[b]));
    let mut out = vec![0.0; n];
    let denom = (n.max(2) - 1) as f64;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if n == 1 { 0.5 } else { rank as f64 / denom };
    }
    RiskGrid::from_vec(grid.width(), grid.height(), out).expect("same shape")
}

/// α = 1 at cell `center`, decreasing linearly to 0 at the nearest map edge
/// distance and clamped at 0 beyond it.
pub fn radial_alpha_field(width: usize, height: usize, center: (f64, f64)) -> Result<RiskGrid> {
    let (cx, cy) = center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= width as f64 && cy <= height as f64) {
        return Err(RiskError::invalid(format!("center {center:?} outside {width}x{height} grid")));
    }
    let reach = cx.min(cy).min(width as f64 - cx).min(height as f64 - cy);
    if reach <= 0.0 {
        return Err(RiskError::invalid("center lies on the map edge"));
    }
    Ok(RiskGrid::from_fn(width, height, |x, y| {
        let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
        (1.0 - d / reach).clamp(0.0, 1.0)
    }))
}
