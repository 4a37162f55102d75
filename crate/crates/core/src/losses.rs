//! Quantile, residual-CVaR and monotonicity losses.
//!
//! Scalar kernels are exposed together with their derivatives so the autodiff
//! graph and the field-level reference implementations share one definition.
//! Field losses average over mask-true cells only.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{check_shapes, RiskGrid};

/// A probability level in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskProbability(f64);

impl RiskProbability {
    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(RiskProbability(alpha))
        } else {
            Err(RiskError::invalid(format!("alpha {alpha} outside [0,1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskProbability {
    type Error = RiskError;
    fn try_from(v: f64) -> Result<Self> {
        RiskProbability::new(v)
    }
}

impl From<RiskProbability> for f64 {
    fn from(p: RiskProbability) -> f64 {
        p.0
    }
}

/// Weights of the combined objective and the quantile smoothing width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_c: f64,
    pub lambda_m: f64,
    pub huber_h: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_v: 10.0,
            lambda_c: 1.0,
            lambda_m: 1.0e-4,
            huber_h: 1.0e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_v", self.lambda_v),
            ("lambda_c", self.lambda_c),
            ("lambda_m", self.lambda_m),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RiskError::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.huber_h.is_finite() && self.huber_h > 0.0) {
            return Err(RiskError::invalid("huber_h must be > 0"));
        }
        Ok(())
    }
}

/// Masked-mean components of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub var_term: f64,
    pub cvar_term: f64,
    pub mono_term: f64,
    pub total: f64,
    pub pixel_count: usize,
}

impl LossBreakdown {
    pub fn combine(var_term: f64, cvar_term: f64, mono_term: f64, pixel_count: usize, w: &LossWeights) -> Self {
        LossBreakdown {
            var_term,
            cvar_term,
            mono_term,
            total: w.lambda_v * var_term + w.lambda_c * cvar_term + w.lambda_m * mono_term,
            pixel_count,
        }
    }
}

fn check_finite(e: f64) -> Result<()> {
    if e.is_finite() {
        Ok(())
    } else {
        Err(RiskError::invalid(format!("non-finite residual {e}")))
    }
}

/// Pinball loss `α·e₊ + (1−α)·(−e)₊` of residual `e = R − V`.
pub fn koenker_bassett(e: f64, alpha: RiskProbability) -> Result<f64> {
    check_finite(e)?;
    Ok(pinball(e, alpha.value()))
}

#[inline]
pub(crate) fn pinball(e: f64, alpha: f64) -> f64 {
    if e >= 0.0 {
        alpha * e
    } else {
        (alpha - 1.0) * e
    }
}

/// Huber-smoothed pinball loss.
///
/// With `a = α·e` for `e > 0` and `a = (1−α)·|e|` otherwise, the loss is `a`
/// once `a ≥ h` and `a²/(2h) + h/2` inside the smoothing band. Value and slope
/// are continuous at both band edges and at `e = 0`.
pub fn huber_quantile(e: f64, alpha: RiskProbability, h: f64) -> Result<f64> {
    check_finite(e)?;
    if !(h.is_finite() && h > 0.0) {
        return Err(RiskError::invalid(format!("huber width must be > 0, got {h}")));
    }
    Ok(huber_quantile_value(e, alpha.value(), h))
}

#[inline]
pub(crate) fn huber_quantile_value(e: f64, alpha: f64, h: f64) -> f64 {
    let a = if e > 0.0 { alpha * e } else { (1.0 - alpha) * -e };
    if a >= h {
        a
    } else {
        a * a / (2.0 * h) + h / 2.0
    }
}

/// Derivative of [`huber_quantile`] with respect to the residual `e`.
#[inline]
pub fn huber_quantile_grad(e: f64, alpha: f64, h: f64) -> f64 {
    let (a, slope) = if e > 0.0 {
        (alpha * e, alpha)
    } else {
        ((1.0 - alpha) * -e, -(1.0 - alpha))
    };
    if a >= h {
        slope
    } else {
        slope * a / h
    }
}

/// Smooth penalty `s(d) = exp(d) − d − 1` applied to the negative part of `d`.
#[inline]
pub fn mono_smooth(d: f64) -> f64 {
    let d = d.min(0.0);
    d.exp_m1() - d
}

#[inline]
pub fn mono_smooth_grad(d: f64) -> f64 {
    if d < 0.0 {
        d.exp_m1()
    } else {
        0.0
    }
}

/// `s(dV) + s(dC)` for the negative parts of the α-derivatives.
pub fn monotonic_penalty(d_v: f64, d_c: f64) -> f64 {
    mono_smooth(d_v) + mono_smooth(d_c)
}

fn masked_mean(mask: &RiskGrid, values: impl Iterator<Item = f64>) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&m, v) in mask.data().iter().zip(values) {
        if m != 0.0 {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RiskError::EmptyMask);
    }
    Ok((sum / n as f64, n))
}

fn check_alpha_field(alpha: &RiskGrid) -> Result<()> {
    if alpha.data().iter().all(|a| (0.0..=1.0).contains(a)) {
        Ok(())
    } else {
        Err(RiskError::invalid("alpha field outside [0,1]"))
    }
}

/// Masked mean of the smoothed quantile loss of `R − V` with per-cell α.
pub fn var_loss_field(r: &RiskGrid, v: &RiskGrid, alpha: &RiskGrid, mask: &RiskGrid, h: f64) -> Result<f64> {
    check_shapes(&[r, v, alpha, mask])?;
    check_alpha_field(alpha)?;
    mask.check_binary()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(RiskError::invalid("huber width must be > 0"));
    }
    let vals = (0..r.len()).map(|i| huber_quantile_value(r.data()[i] - v.data()[i], alpha.data()[i], h));
    masked_mean(mask, vals).map(|(m, _)| m)
}

/// Gradient of [`var_loss_field`] with respect to `V`.
pub fn var_loss_field_grad(r: &RiskGrid, v: &RiskGrid, alpha: &RiskGrid, mask: &RiskGrid, h: f64) -> Result<RiskGrid> {
    check_shapes(&[r, v, alpha, mask])?;
    let n = mask.count_true();
    if n == 0 {
        return Err(RiskError::EmptyMask);
    }
    let data = (0..r.len())
        .map(|i| {
            if mask.data()[i] == 0.0 {
                0.0
            } else {
                -huber_quantile_grad(r.data()[i] - v.data()[i], alpha.data()[i], h) / n as f64
            }
        })
        .collect();
    RiskGrid::from_vec(r.width(), r.height(), data)
}

/// Masked mean of `|Ĉ − (R − V)|·𝟙[R ≥ V]`. `V` is a constant here.
pub fn cvar_residual_loss_field(c_hat: &RiskGrid, r: &RiskGrid, v_frozen: &RiskGrid, mask: &RiskGrid) -> Result<f64> {
    check_shapes(&[c_hat, r, v_frozen, mask])?;
    let vals = (0..r.len()).map(|i| {
        let (ri, vi) = (r.data()[i], v_frozen.data()[i]);
        if ri >= vi {
            (c_hat.data()[i] - (ri - vi)).abs()
        } else {
            0.0
        }
    });
    masked_mean(mask, vals).map(|(m, _)| m)
}

/// Gradient of [`cvar_residual_loss_field`] with respect to `Ĉ`.
pub fn cvar_residual_loss_field_grad(c_hat: &RiskGrid, r: &RiskGrid, v_frozen: &RiskGrid, mask: &RiskGrid) -> Result<RiskGrid> {
    check_shapes(&[c_hat, r, v_frozen, mask])?;
    let n = mask.count_true();
    if n == 0 {
        return Err(RiskError::EmptyMask);
    }
    let data = (0..r.len())
        .map(|i| {
            let (ri, vi) = (r.data()[i], v_frozen.data()[i]);
            if mask.data()[i] == 0.0 || ri < vi {
                0.0
            } else {
                (c_hat.data()[i] - (ri - vi)).signum() / n as f64
            }
        })
        .collect();
    RiskGrid::from_vec(r.width(), r.height(), data)
}

/// Scheme for estimating output derivatives with respect to the α input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteDifference {
    /// One extra evaluation; steps backwards where `α + δ > 1`.
    Forward,
    #[default]
    Central,
}

/// Per-cell α perturbations `(lo, hi)` for a finite-difference scheme, with
/// both ends clamped to `[0, 1]`.
pub fn alpha_stencil(alpha: &RiskGrid, delta: f64, scheme: FiniteDifference) -> (RiskGrid, RiskGrid) {
    match scheme {
        FiniteDifference::Central => (
            alpha.map(|a| (a - delta).max(0.0)),
            alpha.map(|a| (a + delta).min(1.0)),
        ),
        FiniteDifference::Forward => {
            let lo = alpha.map(|a| if a + delta <= 1.0 { a } else { a - delta });
            let hi = alpha.map(|a| if a + delta <= 1.0 { a + delta } else { a });
            (lo, hi)
        }
    }
}

/// Negative parts of the α-derivatives of both model outputs.
///
/// `predict` maps an α field to `(V, C)`. The derivative is estimated by
/// finite differences with step `delta`, then `min(·, 0)` is applied, so both
/// returned fields are `≤ 0` everywhere.
pub fn alpha_derivative<F>(predict: F, alpha: &RiskGrid, delta: f64, scheme: FiniteDifference) -> Result<(RiskGrid, RiskGrid)>
where
    F: Fn(&RiskGrid) -> Result<(RiskGrid, RiskGrid)>,
{
    if !(delta.is_finite() && delta > 0.0 && delta < 0.5) {
        return Err(RiskError::invalid(format!("finite-difference step must be in (0, 0.5), got {delta}")));
    }
    check_alpha_field(alpha)?;
    let (lo, hi) = alpha_stencil(alpha, delta, scheme);
    let (v_lo, c_lo) = predict(&lo)?;
    let (v_hi, c_hi) = predict(&hi)?;
    let step = hi.zip_map(&lo, |a, b| a - b)?;
    let neg_slope = |f_hi: &RiskGrid, f_lo: &RiskGrid| -> Result<RiskGrid> {
        let diff = f_hi.zip_map(f_lo, |a, b| a - b)?;
        diff.zip_map(&step, |d, s| if s > 0.0 { (d / s).min(0.0) } else { 0.0 })
    };
    Ok((neg_slope(&v_hi, &v_lo)?, neg_slope(&c_hi, &c_lo)?))
}

/// Combined objective evaluated on fields.
///
/// `dv`, `dc` are the negative-part α-derivatives from [`alpha_derivative`].
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    r: &RiskGrid,
    v: &RiskGrid,
    c_hat: &RiskGrid,
    alpha: &RiskGrid,
    mask: &RiskGrid,
    dv: &RiskGrid,
    dc: &RiskGrid,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    check_shapes(&[r, v, c_hat, alpha, mask, dv, dc])?;
    let var_term = var_loss_field(r, v, alpha, mask, w.huber_h)?;
    let cvar_term = cvar_residual_loss_field(c_hat, r, v, mask)?;
    let (mono_term, n) = masked_mean(
        mask,
        dv.data().iter().zip(dc.data()).map(|(&a, &b)| monotonic_penalty(a, b)),
    )?;
    Ok(LossBreakdown::combine(var_term, cvar_term, mono_term, n, w))
}
