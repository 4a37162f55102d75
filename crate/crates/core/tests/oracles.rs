//! Library risk functionals against independent oracles and Monte Carlo.

mod common;

use common::{clamped_mix_var_cvar, oracle_empirical_cvar, oracle_empirical_var, rng, Mix};
use proptest::prelude::*;
use riskmap::losses::{koenker_bassett, RiskProbability};
use riskmap::metrics::{empirical_cvar, empirical_var};
use riskmap::synth::terrain::LabelNoise;

/// Default terrain label law at cost `g`, before clamping.
fn terrain_law(g: f64) -> Mix {
    let k = 0.8;
    vec![(0.7, k * 0.1 + (1.0 - k + k * 0.5) * g, k * 0.04), (0.3, k * 0.45 + (1.0 - k + k * 0.4) * g, k * 0.06)]
}

#[test]
fn terrain_truth_matches_independent_quadrature() {
    let noise = LabelNoise::default();
    for g in [0.0, 0.2, 0.45, 0.7, 1.0] {
        for a in [0.1, 0.5, 0.9] {
            let (v, c) = noise.var_cvar(g, RiskProbability::new(a).unwrap()).unwrap();
            let (ov, oc) = clamped_mix_var_cvar(&terrain_law(g), a);
            assert!((v - ov).abs() < 1e-6, "g={g} α={a}: VaR {v} vs {ov}");
            assert!((c - oc).abs() < 2e-3, "g={g} α={a}: CVaR {c} vs {oc}");
        }
    }
}

#[test]
fn terrain_truth_within_dkw_band_of_monte_carlo() {
    let noise = LabelNoise::default();
    let n = 20_000;
    // DKW: sup |F̂ − F| ≤ ε with probability 1 − δ, δ = 1e-3
    let eps = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
    let mut r = rng(31);
    for g in [0.05, 0.3, 0.6, 0.95] {
        let ys: Vec<f64> = (0..n).map(|_| noise.sample(g, &mut r)).collect();
        for a in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let (v, c) = noise.var_cvar(g, RiskProbability::new(a).unwrap()).unwrap();
            let below = ys.iter().filter(|&&y| y < v).count() as f64 / n as f64;
            let at_or_below = ys.iter().filter(|&&y| y <= v).count() as f64 / n as f64;
            assert!(below <= a + eps && at_or_below >= a - eps, "g={g} α={a}: F̂(V−)={below}, F̂(V)={at_or_below}");
            let mc = oracle_empirical_cvar(&ys, a);
            assert!((mc - c).abs() < 0.02, "g={g} α={a}: CVaR {c} vs Monte Carlo {mc}");
        }
    }
}

proptest! {
    #[test]
    fn empirical_var_minimizes_pinball(ys in prop::collection::vec(-5.0f64..5.0, 1..60), a in 0.01f64..0.99) {
        let p = RiskProbability::new(a).unwrap();
        let risk = |z: f64| ys.iter().map(|y| koenker_bassett(y - z, p).unwrap()).sum::<f64>();
        let v = empirical_var(&ys, p).unwrap();
        let best = ys.iter().map(|&z| risk(z)).fold(f64::INFINITY, f64::min);
        prop_assert!(risk(v) <= best + 1e-9);
        prop_assert_eq!(v, oracle_empirical_var(&ys, a));
    }

    #[test]
    fn empirical_cvar_matches_oracle_and_dominates_var(ys in prop::collection::vec(-5.0f64..5.0, 1..60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let p = |x: f64| RiskProbability::new(x).unwrap();
        let c = empirical_cvar(&ys, p(lo)).unwrap();
        prop_assert!((c - oracle_empirical_cvar(&ys, lo)).abs() < 1e-9);
        prop_assert!(c >= empirical_var(&ys, p(lo)).unwrap());
        prop_assert!(empirical_var(&ys, p(hi)).unwrap() >= empirical_var(&ys, p(lo)).unwrap());
        prop_assert!(empirical_cvar(&ys, p(hi)).unwrap() >= c - 1e-12);
    }
}
