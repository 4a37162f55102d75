use rand::Rng;

use crate::error::{Result, RiskError};

use super::tensor::Tensor;

/// `(fan_in, fan_out)` for a weight shape: `[n]`, `[in, out]`, or
/// `[out, in, k, k]` convolution kernels.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [] => Err(RiskError::invalid("empty shape")),
        [n] => Ok((*n, *n)),
        [fan_in, fan_out] => Ok((*fan_in, *fan_out)),
        [out, inp, rest @ ..] => {
            let rf: usize = rest.iter().product();
            Ok((inp * rf, out * rf))
        }
    }
}

/// Uniform Xavier/Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let (fi, fo) = fans(shape)?;
    if shape.iter().any(|&d| d == 0) {
        return Err(RiskError::invalid(format!("zero-sized dimension in {shape:?}")));
    }
    let bound = (6.0 / (fi + fo) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
