//! The one-dimensional heteroskedastic toy problem.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RowSet;
use crate::error::{Result, RiskError};
use crate::losses::RiskProbability;

use super::mixture::{mixture_var_cvar, MixtureSpec};

/// Draws `n` pairs with `x ~ U(domain)` and `y` from the mixture at `x`.
pub fn toy1d_generate<R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<RowSet> {
    spec.validate()?;
    if n == 0 {
        return Err(RiskError::invalid("need at least one sample"));
    }
    let (lo, hi) = spec.domain;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = rng.gen_range(lo..hi);
        x.push(xi);
        y.push(spec.at(xi).sample(rng));
    }
    RowSet::new(1, x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTruthRow {
    pub x: f64,
    pub alpha: f64,
    pub var: f64,
    pub cvar: f64,
}

/// Oracle VaR / CVaR on an `xs × alphas` grid.
pub fn toy_truth(spec: &MixtureSpec, xs: &[f64], alphas: &[f64]) -> Result<Vec<ToyTruthRow>> {
    let mut rows = Vec::with_capacity(xs.len() * alphas.len());
    for &x in xs {
        for &a in alphas {
            let (var, cvar) = mixture_var_cvar(spec, x, RiskProbability::new(a)?)?;
            rows.push(ToyTruthRow { x, alpha: a, var, cvar });
        }
    }
    Ok(rows)
}

/// `n` evenly spaced points spanning the domain.
pub fn even_grid(domain: (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (domain.0 + domain.1)],
        _ => (0..n).map(|i| domain.0 + (domain.1 - domain.0) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn write_truth_csv<W: Write>(rows: &[ToyTruthRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| RiskError::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| RiskError::Format(e.to_string()))
}

/// Interquartile range of the labels (empirical quartiles).
pub fn label_iqr(set: &RowSet) -> Result<f64> {
    let q = |a: f64| crate::metrics::empirical_var(&set.y, RiskProbability::new(a)?);
    Ok(q(0.75)? - q(0.25)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::mixture::{Curve, MixtureComponent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_component_tracks_mean() {
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: Curve { sin_amp: 1.0, sin_freq: 2.0, ..Default::default() },
                std: Curve::constant(1e-6),
            }],
            domain: (-3.0, 3.0),
        };
        let set = toy1d_generate(&spec, 500, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (x, y) in set.x.iter().zip(&set.y) {
            assert!((y - (2.0 * x).sin()).abs() < 1e-5);
        }
    }

    #[test]
    fn conditional_mean_matches_moments() {
        let spec = MixtureSpec::toy_default();
        let law = spec.at(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - law.mean()).abs() < 3.0 * law.variance().sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn seeded_and_validated() {
        let spec = MixtureSpec::toy_default();
        let a = toy1d_generate(&spec, 100, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = toy1d_generate(&spec, 100, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.x.iter().all(|x| (-3.0..3.0).contains(x)));
        assert!(toy1d_generate(&spec, 0, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
        let mut bad = spec;
        bad.components[0].weight = 0.7;
        assert!(toy1d_generate(&bad, 10, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
    }

    #[test]
    fn truth_rows_and_csv() {
        let rows = toy_truth(&MixtureSpec::toy_default(), &even_grid((-3.0, 3.0), 5), &[0.3, 0.9]).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.cvar >= r.var));
        let mut buf = Vec::new();
        write_truth_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,alpha,var,cvar\n"));
    }
}
