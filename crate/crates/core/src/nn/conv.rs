//! Partial (mask-renormalized) 2-D convolution kernels.
//!
//! Inputs are `[C, H, W]` with a single-channel binary mask `[H, W]`. Cells
//! outside the padded border count as unknown.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

use super::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if self.kernel == 0 || self.stride == 0 {
            return Err(RiskError::invalid("kernel and stride must be positive"));
        }
        if self.kernel > ph || self.kernel > pw {
            return Err(RiskError::invalid(format!(
                "kernel {} larger than padded input {ph}x{pw}",
                self.kernel
            )));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PartialConvCache {
    pub geom: ConvGeom,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    /// Masked im2col matrix, `patch_len × (Ho·Wo)`.
    pub cols: Vec<f64>,
    /// `k²/Σm` where the window has known cells, else 0.
    pub ratio: Vec<f64>,
}

fn im2col(x: &[f64], mask: &[f64], g: &ConvGeom, (h, w): (usize, usize), (ho, wo): (usize, usize)) -> Vec<f64> {
    let p = ho * wo;
    let k = g.kernel;
    let mut cols = vec![0.0; g.patch_len() * p];
    for c in 0..g.in_ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = iy * w + ix as usize;
                        dst[oy * wo + ox] = plane[src] * mask[src];
                    }
                }
            }
        }
    }
    cols
}

/// Number of known cells under each output window.
pub fn window_counts(mask: &[f64], g: &ConvGeom, (h, w): (usize, usize), (ho, wo): (usize, usize)) -> Vec<f64> {
    let k = g.kernel;
    let mut counts = vec![0.0; ho * wo];
    for oy in 0..ho {
        for ox in 0..wo {
            let mut s = 0.0;
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    s += mask[iy as usize * w + ix as usize];
                }
            }
            counts[oy * wo + ox] = s;
        }
    }
    counts
}

/// Partial convolution forward: returns `(y, mask_out, cache)`.
///
/// `y(p) = W·(x⊙m)(window p)·k²/Σm + b` where `Σm > 0`, otherwise 0, and
/// `mask_out(p) = 𝟙[Σm > 0]`.
pub fn partial_conv_forward(
    x: &[f64],
    mask: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: ConvGeom,
    in_hw: (usize, usize),
) -> Result<(Vec<f64>, Vec<f64>, PartialConvCache)> {
    let (h, w) = in_hw;
    if x.len() != g.in_ch * h * w || mask.len() != h * w {
        return Err(RiskError::invalid("partial conv input/mask size mismatch"));
    }
    if weight.len() != g.out_ch * g.patch_len() || bias.len() != g.out_ch {
        return Err(RiskError::invalid("partial conv parameter size mismatch"));
    }
    let out_hw = g.output_size(h, w)?;
    let p = out_hw.0 * out_hw.1;
    let cols = im2col(x, mask, &g, in_hw, out_hw);
    let counts = window_counts(mask, &g, in_hw, out_hw);
    let full = (g.kernel * g.kernel) as f64;
    let ratio: Vec<f64> = counts.iter().map(|&s| if s > 0.0 { full / s } else { 0.0 }).collect();
    let mask_out: Vec<f64> = counts.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect();

    let mut y = vec![0.0; g.out_ch * p];
    gemm(g.out_ch, g.patch_len(), p, weight, false, &cols, false, &mut y, 0.0);
    for o in 0..g.out_ch {
        let row = &mut y[o * p..(o + 1) * p];
        for (v, (&r, &m)) in row.iter_mut().zip(ratio.iter().zip(&mask_out)) {
            *v = (*v * r + bias[o]) * m;
        }
    }
    Ok((
        y,
        mask_out,
        PartialConvCache {
            geom: g,
            in_hw,
            out_hw,
            cols,
            ratio,
        },
    ))
}

/// Gradients `(dx, dweight, dbias)` for upstream gradient `dy`.
pub fn partial_conv_backward(
    cache: &PartialConvCache,
    mask: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let g = &cache.geom;
    let p = cache.out_hw.0 * cache.out_hw.1;
    let mut draw = dy.to_vec();
    let mut dbias = vec![0.0; g.out_ch];
    for o in 0..g.out_ch {
        let row = &mut draw[o * p..(o + 1) * p];
        for (i, v) in row.iter_mut().enumerate() {
            let r = cache.ratio[i];
            if r > 0.0 {
                dbias[o] += *v;
            }
            *v *= r;
        }
    }
    let mut dweight = vec![0.0; weight.len()];
    gemm(g.out_ch, p, g.patch_len(), &draw, false, &cache.cols, true, &mut dweight, 0.0);

    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; g.patch_len() * p];
        gemm(g.patch_len(), g.out_ch, p, weight, true, &draw, false, &mut dcols, 0.0);
        col2im(&dcols, mask, g, cache.in_hw, cache.out_hw)
    });
    (dx, dweight, dbias)
}

fn col2im(dcols: &[f64], mask: &[f64], g: &ConvGeom, (h, w): (usize, usize), (ho, wo): (usize, usize)) -> Vec<f64> {
    let p = ho * wo;
    let k = g.kernel;
    let mut dx = vec![0.0; g.in_ch * h * w];
    for c in 0..g.in_ch {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &dcols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[iy * w + ix as usize] += src[oy * wo + ox];
                    }
                }
            }
        }
        for (v, &m) in plane.iter_mut().zip(mask) {
            *v *= m;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop reference partial convolution.
    fn reference(x: &[f64], mask: &[f64], wt: &[f64], b: &[f64], g: ConvGeom, (h, w): (usize, usize)) -> (Vec<f64>, Vec<f64>) {
        let (ho, wo) = g.output_size(h, w).unwrap();
        let k = g.kernel;
        let mut y = vec![0.0; g.out_ch * ho * wo];
        let mut mo = vec![0.0; ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut known = 0.0;
                let mut acc = vec![0.0; g.out_ch];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let cell = iy as usize * w + ix as usize;
                        known += mask[cell];
                        for o in 0..g.out_ch {
                            for c in 0..g.in_ch {
                                acc[o] += wt[((o * g.in_ch + c) * k + ky) * k + kx] * x[c * h * w + cell] * mask[cell];
                            }
                        }
                    }
                }
                if known > 0.0 {
                    mo[oy * wo + ox] = 1.0;
                    for o in 0..g.out_ch {
                        y[(o * ho + oy) * wo + ox] = acc[o] * (k * k) as f64 / known + b[o];
                    }
                }
            }
        }
        (y, mo)
    }

    #[test]
    fn matches_reference_with_holes() {
        let g = ConvGeom { in_ch: 2, out_ch: 3, kernel: 3, stride: 2, padding: 1 };
        let (h, w) = (7, 6);
        let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let mask: Vec<f64> = (0..h * w).map(|i| if (i * 7) % 5 < 2 { 0.0 } else { 1.0 }).collect();
        let wt: Vec<f64> = (0..3 * 18).map(|i| (i as f64 * 1.3).cos()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let (y, mo, _) = partial_conv_forward(&x, &mask, &wt, &b, g, (h, w)).unwrap();
        let (yr, mor) = reference(&x, &mask, &wt, &b, g, (h, w));
        assert_eq!(mo, mor);
        for (a, r) in y.iter().zip(&yr) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalization_example() {
        // 3x3 ones kernel, 3 of 9 window cells known with value 1 → 3·(9/3) = 9
        let g = ConvGeom { in_ch: 1, out_ch: 1, kernel: 3, stride: 1, padding: 0 };
        let x = vec![1.0; 9];
        let mask = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (y, mo, _) = partial_conv_forward(&x, &mask, &[1.0; 9], &[0.0], g, (3, 3)).unwrap();
        assert_eq!(y, vec![9.0]);
        assert_eq!(mo, vec![1.0]);
    }

    #[test]
    fn empty_mask_gives_zero() {
        let g = ConvGeom { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, padding: 1 };
        let x = vec![5.0; 16];
        let (y, mo, _) = partial_conv_forward(&x, &[0.0; 16], &[1.0; 18], &[0.5, 0.5], g, (4, 4)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(mo.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let g = ConvGeom { in_ch: 1, out_ch: 1, kernel: 5, stride: 1, padding: 0 };
        assert!(partial_conv_forward(&[0.0; 9], &[1.0; 9], &[0.0; 25], &[0.0], g, (3, 3)).is_err());
    }
}
