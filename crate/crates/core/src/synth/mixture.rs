//! Gaussian-mixture laws with numerically exact VaR / CVaR.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Result, RiskError};
use crate::losses::RiskProbability;

use super::quad::adaptive_simpson;

const VAR_TOL: f64 = 1e-8;
const CVAR_TOL: f64 = 1e-6;

/// `offset + slope·x + abs_slope·|x| + sin_amp·sin(sin_freq·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Curve {
    pub offset: f64,
    pub slope: f64,
    pub abs_slope: f64,
    pub sin_amp: f64,
    pub sin_freq: f64,
}

impl Curve {
    pub fn constant(c: f64) -> Self {
        Curve { offset: c, ..Default::default() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.offset + self.slope * x + self.abs_slope * x.abs() + self.sin_amp * (self.sin_freq * x).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Curve,
    pub std: Curve,
}

/// An x-conditional Gaussian mixture over a bounded x domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub domain: (f64, f64),
}

impl MixtureSpec {
    /// Two-mode heteroskedastic fixture used for the 1-D experiments.
    pub fn toy_default() -> Self {
        MixtureSpec {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: Curve { sin_amp: 1.0, sin_freq: 2.0, ..Default::default() },
                    std: Curve { offset: 0.1, abs_slope: 0.1, ..Default::default() },
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: Curve { offset: 2.0, slope: 0.25, sin_amp: 1.0, sin_freq: 2.0, ..Default::default() },
                    std: Curve::constant(0.3),
                },
            ],
            domain: (-3.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(RiskError::invalid("mixture needs at least one component"));
        }
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(RiskError::invalid("mixture domain must be a finite, non-empty interval"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(RiskError::invalid("mixture weights must be positive and sum to 1"));
        }
        // std curves are piecewise smooth; check on a dense grid plus endpoints
        for i in 0..=1000 {
            let x = lo + (hi - lo) * i as f64 / 1000.0;
            if self.components.iter().any(|c| !(c.std.eval(x) > 0.0)) {
                return Err(RiskError::invalid(format!("non-positive std at x = {x}")));
            }
        }
        Ok(())
    }

    /// The conditional law at `x`.
    pub fn at(&self, x: f64) -> GaussianMixture {
        GaussianMixture {
            components: self
                .components
                .iter()
                .map(|c| Gaussian { weight: c.weight, mean: c.mean.eval(x), std: c.std.eval(x) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A fixed (unconditional) Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn cdf(&self, z: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_cdf((z - c.mean) / c.std))
            .sum()
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_pdf((z - c.mean) / c.std) / c.std)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.std * c.std + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }

    /// Integration window wide enough that excluded mass is below 1e-30.
    fn support(&self) -> (f64, f64) {
        let lo = self.components.iter().map(|c| c.mean - 12.0 * c.std).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.mean + 12.0 * c.std).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn check(&self) -> Result<()> {
        if self.components.is_empty()
            || self
                .components
                .iter()
                .any(|c| !(c.weight > 0.0 && c.std > 0.0 && c.mean.is_finite() && c.std.is_finite()))
        {
            return Err(RiskError::invalid("mixture components need positive weight and std"));
        }
        Ok(())
    }

    /// α-quantile by bisection on the CDF.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        self.check()?;
        if alpha <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if alpha >= 1.0 {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = self.support();
        if self.cdf(lo) > alpha || self.cdf(hi) < alpha {
            return Err(RiskError::NumericFailure(format!("quantile {alpha} not bracketed")));
        }
        for _ in 0..200 {
            if hi - lo <= VAR_TOL * 0.5 {
                return Ok(0.5 * (lo + hi));
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) > alpha {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(RiskError::NumericFailure("quantile bisection did not converge".into()))
    }

    /// `∫_a^b y·f(y) dy` by adaptive quadrature, split per component so each
    /// integrand is unimodal.
    fn partial_expectation(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.components
            .iter()
            .map(|c| {
                let lo = a.max(c.mean - 12.0 * c.std);
                let hi = b.min(c.mean + 12.0 * c.std);
                if hi <= lo {
                    return 0.0;
                }
                let f = |y: f64| y * c.weight * norm_pdf((y - c.mean) / c.std) / c.std;
                // split at the mode so the integrand is smooth on each piece
                let mid = c.mean.clamp(lo, hi);
                adaptive_simpson(f, lo, mid, CVAR_TOL * 1e-3) + adaptive_simpson(f, mid, hi, CVAR_TOL * 1e-3)
            })
            .sum()
    }

    /// `(VaR_α, CVaR_α)` with CVaR the mean of the tail above VaR.
    pub fn var_cvar(&self, alpha: f64) -> Result<(f64, f64)> {
        let var = self.quantile(alpha)?;
        if var == f64::NEG_INFINITY {
            return Ok((var, self.mean()));
        }
        let (_, hi) = self.support();
        let tail_mass = 1.0 - self.cdf(var);
        if tail_mass <= 0.0 {
            return Err(RiskError::NumericFailure("empty tail".into()));
        }
        let cvar = self.partial_expectation(var, hi) / tail_mass;
        Ok((var, cvar.max(var)))
    }

    /// VaR and CVaR of `clamp(Y, lo, hi)`.
    ///
    /// The clamped variable has atoms at the bounds, so CVaR conditions on
    /// `{Y_c ≥ VaR}` whose mass can exceed `1 − α`.
    pub fn clamped_var_cvar(&self, alpha: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
        self.check()?;
        let var = self.quantile(alpha)?.clamp(lo, hi);
        if var >= hi {
            return Ok((hi, hi));
        }
        let f_lo = self.cdf(lo);
        let upper_mass = 1.0 - self.cdf(hi);
        let interior_top = self.partial_expectation(var.max(lo), hi) + hi * upper_mass;
        let (num, den) = if var <= lo {
            (interior_top + lo * f_lo, 1.0)
        } else {
            (interior_top, 1.0 - self.cdf(var))
        };
        if den <= 0.0 {
            return Ok((var, hi));
        }
        Ok((var, (num / den).clamp(var, hi)))
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.components.last().expect("non-empty mixture");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                pick = c;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        pick.mean + pick.std * z
    }
}

/// VaR and CVaR of the conditional law of `spec` at `x`.
pub fn mixture_var_cvar(spec: &MixtureSpec, x: f64, alpha: RiskProbability) -> Result<(f64, f64)> {
    let a = alpha.value();
    if a > 0.999 {
        return Err(RiskError::invalid(format!("alpha {a} above 0.999")));
    }
    spec.at(x).var_cvar(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal(mean: f64, std: f64) -> GaussianMixture {
        GaussianMixture { components: vec![Gaussian { weight: 1.0, mean, std }] }
    }

    fn p(a: f64) -> RiskProbability {
        RiskProbability::new(a).unwrap()
    }

    #[test]
    fn standard_normal_values() {
        let (v, c) = normal(0.0, 1.0).var_cvar(0.9).unwrap();
        assert_relative_eq!(v, 1.281552, epsilon = 1e-6);
        assert_relative_eq!(c, 1.754983, epsilon = 1e-6);
        // closed form φ(z)/(1−α)
        assert_relative_eq!(c, norm_pdf(v) / 0.1, epsilon = 1e-6);
        let (v, _) = normal(0.0, 1.0).var_cvar(0.5).unwrap();
        assert!(v.abs() <= 1e-8);
    }

    #[test]
    fn monte_carlo_cross_check() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2_000_000;
        let mut s: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        s.sort_by(f64::total_cmp);
        let var = crate::metrics::empirical_var(&s, p(0.9)).unwrap();
        let cvar = crate::metrics::empirical_cvar(&s, p(0.9)).unwrap();
        assert!((var - 1.281552).abs() < 5e-3);
        assert!((cvar - 1.754983).abs() < 5e-3);
    }

    #[test]
    fn location_scale_identity() {
        let (v0, c0) = normal(0.0, 1.0).var_cvar(0.73).unwrap();
        let (v, c) = normal(3.0, 2.5).var_cvar(0.73).unwrap();
        assert_relative_eq!(v, 3.0 + 2.5 * v0, epsilon = 1e-7);
        assert_relative_eq!(c, 3.0 + 2.5 * c0, epsilon = 1e-7);
    }

    #[test]
    fn two_point_limit() {
        let m = GaussianMixture {
            components: vec![
                Gaussian { weight: 0.5, mean: 0.0, std: 1e-6 },
                Gaussian { weight: 0.5, mean: 10.0, std: 1e-6 },
            ],
        };
        let (v, c) = m.var_cvar(0.6).unwrap();
        assert!((v - 10.0).abs() < 1e-4);
        assert!((c - 10.0).abs() < 1e-4);
    }

    #[test]
    fn spec_validation() {
        assert!(MixtureSpec::toy_default().validate().is_ok());
        let mut bad = MixtureSpec::toy_default();
        bad.components[0].weight = 0.7;
        assert!(bad.validate().is_err());
        let mut bad = MixtureSpec::toy_default();
        bad.components[1].std = Curve { offset: 0.1, slope: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(mixture_var_cvar(&MixtureSpec::toy_default(), 0.0, p(0.9995)).is_err());
    }

    #[test]
    fn monotone_in_alpha() {
        let spec = MixtureSpec::toy_default();
        for &x in &[-2.5, 0.0, 1.3] {
            let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for i in 1..100 {
                let a = i as f64 / 100.0;
                let (v, c) = mixture_var_cvar(&spec, x, p(a)).unwrap();
                assert!(c >= v);
                assert!(v >= prev.0 && c >= prev.1 - 1e-9);
                prev = (v, c);
            }
        }
    }

    #[test]
    fn affine_equivariance_of_mixture() {
        let m = MixtureSpec::toy_default().at(0.7);
        let (a, b) = (1.7, -0.4);
        let t = GaussianMixture {
            components: m
                .components
                .iter()
                .map(|c| Gaussian { weight: c.weight, mean: a * c.mean + b, std: a * c.std })
                .collect(),
        };
        for alpha in [0.1, 0.5, 0.95] {
            let (v, c) = m.var_cvar(alpha).unwrap();
            let (vt, ct) = t.var_cvar(alpha).unwrap();
            assert_relative_eq!(vt, a * v + b, epsilon = 1e-7);
            assert_relative_eq!(ct, a * c + b, epsilon = 1e-7);
        }
    }

    #[test]
    fn clamped_matches_monte_carlo() {
        let m = GaussianMixture {
            components: vec![
                Gaussian { weight: 0.7, mean: 0.1, std: 0.2 },
                Gaussian { weight: 0.3, mean: 0.9, std: 0.15 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s: Vec<f64> = (0..1_000_000).map(|_| m.sample(&mut rng).clamp(0.0, 1.0)).collect();
        for alpha in [0.1, 0.3, 0.6, 0.9, 0.97] {
            let (v, c) = m.clamped_var_cvar(alpha, 0.0, 1.0).unwrap();
            let ev = crate::metrics::empirical_var(&s, p(alpha)).unwrap();
            let ec = crate::metrics::empirical_cvar(&s, p(alpha)).unwrap();
            assert!((v - ev).abs() < 5e-3, "alpha {alpha}: var {v} vs {ev}");
            assert!((c - ec).abs() < 5e-3, "alpha {alpha}: cvar {c} vs {ec}");
        }
    }
}
