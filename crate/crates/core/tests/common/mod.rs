//! Helpers shared by the integration tests: finite-difference gradient
//! checks, independent risk oracles and a dense convolution reference.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskmap::nn::conv::ConvGeom;
use riskmap::nn::graph::{Activation, Graph, Var};
use riskmap::nn::model::{Architecture, HeadKind, InputNorm, ModelConfig, RiskModel};
use riskmap::nn::Tensor;
use riskmap::RiskGrid;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

pub const TRIALS: usize = 100;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n, -1.0, 1.0)).unwrap()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
/// gradients, with an absolute floor for vanishing gradients.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Largest relative error over all parameters of the scalar graph `build`.
pub fn check_graph(params: &[Tensor], build: &dyn Fn(&mut Graph<'_>) -> Var) -> f64 {
    let analytic = {
        let mut g = Graph::new(params);
        let out = build(&mut g);
        g.backward(out).unwrap()
    };
    let eval = |p: &[Tensor]| {
        let mut g = Graph::new(p);
        let out = build(&mut g);
        g.value(out).item()
    };
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (k, p) in params.iter().enumerate() {
        let mut numeric = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let x0 = p.data()[i];
            work[k].data_mut()[i] = x0 + eps;
            let up = eval(&work);
            work[k].data_mut()[i] = x0 - eps;
            let down = eval(&work);
            work[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * eps));
        }
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Central-difference derivative of a scalar function of a vector.
pub fn numeric_grad(x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let eps = 1e-6;
    let mut w = x.to_vec();
    (0..x.len())
        .map(|i| {
            w[i] = x[i] + eps;
            let up = f(&w);
            w[i] = x[i] - eps;
            let down = f(&w);
            w[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Reduces any node to a scalar through a random linear functional.
pub fn reduce(g: &mut Graph<'_>, v: Var, weights: &[f64]) -> Var {
    let n = g.value(v).len();
    let w = g.mul_const(v, &weights[..n]).unwrap();
    g.masked_mean(w, &vec![1.0; n]).unwrap()
}

/// Resamples until every value is at least `gap` away from each kink.
pub fn away_from<R: Rng>(rng: &mut R, n: usize, kinks: &[f64], gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let x: f64 = rng.gen_range(-1.5..1.5);
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect()
}

/// A gradient-check case: name plus one randomized trial returning its error.
pub type Case = (&'static str, fn(&mut ChaCha8Rng) -> f64);

fn case_matmul(r: &mut ChaCha8Rng) -> f64 {
    let (n, k, m) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
    let p = vec![tensor(r, &[n, k]), tensor(r, &[k, m])];
    let wts = rand_vec(r, n * m, -1.0, 1.0);
    check_graph(&p, &|g| {
        let (a, b) = (g.param(0).unwrap(), g.param(1).unwrap());
        let y = g.matmul(a, b).unwrap();
        reduce(g, y, &wts)
    })
}

fn case_bias_add_sub_scale(r: &mut ChaCha8Rng) -> f64 {
    let (n, m) = (r.gen_range(1..5), r.gen_range(1..5));
    let p = vec![tensor(r, &[n, m]), tensor(r, &[m]), tensor(r, &[n, m])];
    let wts = rand_vec(r, n * m, -1.0, 1.0);
    let s = r.gen_range(-2.0..2.0);
    check_graph(&p, &|g| {
        let (a, b, c) = (g.param(0).unwrap(), g.param(1).unwrap(), g.param(2).unwrap());
        let y = g.add_row_bias(a, b).unwrap();
        let y = g.scale(y, s);
        let y = g.sub(y, c).unwrap();
        let a3 = g.scale(a, 0.3);
        let y = g.add(y, a3).unwrap();
        reduce(g, y, &wts)
    })
}

fn case_activation(r: &mut ChaCha8Rng, f: Activation) -> f64 {
    let n = r.gen_range(1..12);
    let x = away_from(r, n, &[0.0], 1e-3);
    let p = vec![Tensor::new(vec![n], x).unwrap()];
    let wts = rand_vec(r, n, -1.0, 1.0);
    check_graph(&p, &|g| {
        let a = g.param(0).unwrap();
        let y = g.act(a, f);
        reduce(g, y, &wts)
    })
}

fn case_relu(r: &mut ChaCha8Rng) -> f64 {
    case_activation(r, Activation::Relu)
}
fn case_leaky(r: &mut ChaCha8Rng) -> f64 {
    case_activation(r, Activation::LeakyRelu(0.1))
}
fn case_tanh(r: &mut ChaCha8Rng) -> f64 {
    case_activation(r, Activation::Tanh)
}
fn case_elu(r: &mut ChaCha8Rng) -> f64 {
    case_activation(r, Activation::Elu)
}
fn case_softplus(r: &mut ChaCha8Rng) -> f64 {
    case_activation(r, Activation::Softplus)
}

fn case_mono_smooth(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..8);
    let p = vec![Tensor::new(vec![n], rand_vec(r, n, -2.0, 0.0)).unwrap()];
    let wts = rand_vec(r, n, -1.0, 1.0);
    check_graph(&p, &|g| {
        let a = g.param(0).unwrap();
        let y = g.mono_smooth(a);
        reduce(g, y, &wts)
    })
}

fn case_shape_ops(r: &mut ChaCha8Rng) -> f64 {
    let (c, h, w) = (r.gen_range(2..4), r.gen_range(1..4), r.gen_range(1..4));
    let p = vec![tensor(r, &[c, h, w]), tensor(r, &[1, h, w]), tensor(r, &[h, c])];
    let wts = rand_vec(r, 4 * (c + 1) * h * w + h, -1.0, 1.0);
    let j = r.gen_range(0..c);
    let i = r.gen_range(0..c);
    check_graph(&p, &|g| {
        let (a, b, m) = (g.param(0).unwrap(), g.param(1).unwrap(), g.param(2).unwrap());
        let cat = g.concat(&[a, b]).unwrap();
        let up = g.upsample2x(cat).unwrap();
        let s = g.slice0(a, i).unwrap();
        let col = g.column(m, j).unwrap();
        let k = g.mul_const(col, &wts[..h]).unwrap();
        let r1 = reduce(g, up, &wts[h..]);
        let r2 = reduce(g, s, &wts[h..]);
        let r3 = reduce(g, k, &wts);
        g.weighted_sum(&[(r1, 1.0), (r2, -0.5), (r3, 2.0)]).unwrap()
    })
}

pub fn random_mask<R: Rng>(r: &mut R, n: usize, p: f64) -> Vec<f64> {
    (0..n).map(|_| if r.gen_bool(p) { 1.0 } else { 0.0 }).collect()
}

fn case_partial_conv(r: &mut ChaCha8Rng) -> f64 {
    let geom = ConvGeom {
        in_ch: r.gen_range(1..3),
        out_ch: r.gen_range(1..3),
        kernel: [1, 3][r.gen_range(0..2)],
        stride: r.gen_range(1..3),
        padding: r.gen_range(0..2),
    };
    let (h, w) = (r.gen_range(3..7), r.gen_range(3..7));
    let mask = random_mask(r, h * w, 0.7);
    let p = vec![
        tensor(r, &[geom.in_ch, h, w]),
        tensor(r, &[geom.out_ch, geom.in_ch, geom.kernel, geom.kernel]),
        tensor(r, &[geom.out_ch]),
    ];
    let wts = rand_vec(r, geom.out_ch * (h + 2) * (w + 2), -1.0, 1.0);
    check_graph(&p, &|g| {
        let (x, wt, b) = (g.param(0).unwrap(), g.param(1).unwrap(), g.param(2).unwrap());
        let (y, _) = g.partial_conv(x, wt, b, &mask, geom).unwrap();
        reduce(g, y, &wts)
    })
}

fn case_huber(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..10);
    let h = [1e-3, 0.05, 0.3][r.gen_range(0..3)];
    let alpha = rand_vec(r, n, 0.05, 0.95);
    let target = rand_vec(r, n, -1.0, 1.0);
    // residuals placed away from the three branch joins
    let v: Vec<f64> = (0..n)
        .map(|i| loop {
            let e: f64 = r.gen_range(-1.0..1.0);
            let joins = [-h / (1.0 - alpha[i]), 0.0, h / alpha[i]];
            if joins.iter().all(|j| (e - j).abs() > 1e-4) {
                break target[i] - e;
            }
        })
        .collect();
    let p = vec![Tensor::new(vec![n], v).unwrap()];
    check_graph(&p, &|g| {
        let v = g.param(0).unwrap();
        let l = g.huber_quantile(v, &target, &alpha, h).unwrap();
        g.masked_mean(l, &vec![1.0; n]).unwrap()
    })
}

fn case_l1(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..10);
    let target = rand_vec(r, n, -1.0, 1.0);
    let x: Vec<f64> = away_from(r, n, &[0.0], 1e-3).iter().zip(&target).map(|(d, t)| t + d).collect();
    let weight = random_mask(r, n, 0.6);
    let p = vec![Tensor::new(vec![n], x).unwrap()];
    check_graph(&p, &|g| {
        let x = g.param(0).unwrap();
        let l = g.l1_target(x, &target, &weight).unwrap();
        g.masked_mean(l, &vec![1.0; n]).unwrap()
    })
}

fn case_nll(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..10);
    let target = rand_vec(r, n, -1.0, 1.0);
    let p = vec![tensor(r, &[n]), tensor(r, &[n])];
    let mut mask = random_mask(r, n, 0.6);
    mask[0] = 1.0;
    check_graph(&p, &|g| {
        let (m, s) = (g.param(0).unwrap(), g.param(1).unwrap());
        let l = g.gaussian_nll(m, s, &target).unwrap();
        g.masked_mean(l, &mask).unwrap()
    })
}

fn case_detach(r: &mut ChaCha8Rng) -> f64 {
    // gradient through the detached branch must vanish: d/dx [x·c + detach(x)²]
    let n = r.gen_range(1..6);
    let p = vec![tensor(r, &[n])];
    let wts = rand_vec(r, n, -1.0, 1.0);
    let mut g = Graph::new(&p);
    let x = g.param(0).unwrap();
    let d = g.detach(x);
    let sq = g.mul_const(d, p[0].data()).unwrap();
    let y = g.add(x, sq).unwrap();
    let out = reduce(&mut g, y, &wts);
    let grad = g.backward(out).unwrap();
    let expect: Vec<f64> = wts.iter().map(|w| w / n as f64).collect();
    rel_err(&grad[0], &expect)
}

fn case_mlp_model(r: &mut ChaCha8Rng) -> f64 {
    let head = [HeadKind::Risk, HeadKind::Single, HeadKind::Gaussian][r.gen_range(0..3)];
    let cfg = ModelConfig {
        arch: Architecture::Mlp { state_dim: 2, hidden: 5, hidden_layers: 2, activation: Activation::Tanh },
        head,
        input_norm: Some(InputNorm { shift: vec![0.1, -0.2], scale: vec![2.0, 0.5] }),
    };
    let model = RiskModel::new(cfg, r).unwrap();
    let n = 4;
    let mut x = rand_vec(r, 3 * n, -1.0, 1.0);
    for i in 0..n {
        x[3 * i + 2] = r.gen_range(0.0..1.0);
    }
    let input = Tensor::new(vec![n, 3], x).unwrap();
    let wts = rand_vec(r, n, -1.0, 1.0);
    check_graph(model.params(), &|g| {
        let out = model.forward_rows(g, &input).unwrap();
        let parts: Vec<Var> = out.channels.iter().map(|&c| reduce(g, c, &wts)).collect();
        let terms: Vec<(Var, f64)> = parts.iter().enumerate().map(|(k, &v)| (v, 1.0 + k as f64)).collect();
        g.weighted_sum(&terms).unwrap()
    })
}

fn case_encdec_model(r: &mut ChaCha8Rng) -> f64 {
    let head = [HeadKind::Risk, HeadKind::Single, HeadKind::Gaussian][r.gen_range(0..3)];
    let cfg = ModelConfig { arch: Architecture::EncDec { in_channels: 2, width: 2, depth: 2, activation: Activation::Elu }, head, input_norm: None };
    let model = RiskModel::new(cfg, r).unwrap();
    let (w, h) = (4, 4);
    let feats: Vec<RiskGrid> = (0..2).map(|_| RiskGrid::from_vec(w, h, rand_vec(r, w * h, -1.0, 1.0)).unwrap()).collect();
    let alpha = RiskGrid::from_vec(w, h, rand_vec(r, w * h, 0.0, 1.0)).unwrap();
    let mut m = random_mask(r, w * h, 0.8);
    m[0] = 1.0;
    let mask = RiskGrid::from_vec(w, h, m).unwrap();
    let wts = rand_vec(r, w * h, -1.0, 1.0);
    check_graph(model.params(), &|g| {
        let out = model.forward_grid(g, &feats, &alpha, &mask).unwrap();
        let parts: Vec<Var> = out.channels.iter().map(|&c| reduce(g, c, &wts)).collect();
        let terms: Vec<(Var, f64)> = parts.iter().enumerate().map(|(k, &v)| (v, 1.0 + k as f64)).collect();
        g.weighted_sum(&terms).unwrap()
    })
}

fn case_var_loss_field(r: &mut ChaCha8Rng) -> f64 {
    use riskmap::losses::{var_loss_field, var_loss_field_grad};
    let (w, h) = (r.gen_range(1..5), r.gen_range(1..5));
    let n = w * h;
    let hh = 1e-3;
    let alpha = RiskGrid::from_vec(w, h, rand_vec(r, n, 0.05, 0.95)).unwrap();
    let rr = RiskGrid::from_vec(w, h, rand_vec(r, n, 0.0, 1.0)).unwrap();
    let v: Vec<f64> = (0..n)
        .map(|i| loop {
            let e: f64 = r.gen_range(-0.5..0.5);
            let a = alpha.data()[i];
            if [-hh / (1.0 - a), 0.0, hh / a].iter().all(|j| (e - j).abs() > 1e-4) {
                break rr.data()[i] - e;
            }
        })
        .collect();
    let mut m = random_mask(r, n, 0.7);
    m[0] = 1.0;
    let mask = RiskGrid::from_vec(w, h, m).unwrap();
    let vg = RiskGrid::from_vec(w, h, v.clone()).unwrap();
    let analytic = var_loss_field_grad(&rr, &vg, &alpha, &mask, hh).unwrap();
    let numeric = numeric_grad(&v, &|x| {
        var_loss_field(&rr, &RiskGrid::from_vec(w, h, x.to_vec()).unwrap(), &alpha, &mask, hh).unwrap()
    });
    rel_err(analytic.data(), &numeric)
}

fn case_cvar_loss_field(r: &mut ChaCha8Rng) -> f64 {
    use riskmap::losses::{cvar_residual_loss_field, cvar_residual_loss_field_grad};
    let (w, h) = (r.gen_range(1..5), r.gen_range(1..5));
    let n = w * h;
    let rr = RiskGrid::from_vec(w, h, rand_vec(r, n, 0.0, 1.0)).unwrap();
    let vv = RiskGrid::from_vec(w, h, rand_vec(r, n, 0.0, 1.0)).unwrap();
    let c: Vec<f64> = (0..n)
        .map(|i| {
            let resid = rr.data()[i] - vv.data()[i];
            resid + away_from(r, 1, &[0.0], 1e-3)[0]
        })
        .collect();
    let mut m = random_mask(r, n, 0.7);
    m[0] = 1.0;
    let mask = RiskGrid::from_vec(w, h, m).unwrap();
    let cg = RiskGrid::from_vec(w, h, c.clone()).unwrap();
    let analytic = cvar_residual_loss_field_grad(&cg, &rr, &vv, &mask).unwrap();
    let numeric = numeric_grad(&c, &|x| {
        cvar_residual_loss_field(&RiskGrid::from_vec(w, h, x.to_vec()).unwrap(), &rr, &vv, &mask).unwrap()
    });
    rel_err(analytic.data(), &numeric)
}

fn case_scalar_losses(r: &mut ChaCha8Rng) -> f64 {
    use riskmap::losses::{huber_quantile, huber_quantile_grad, mono_smooth, mono_smooth_grad, RiskProbability};
    let a: f64 = r.gen_range(0.05..0.95);
    let h = [1e-3, 0.1][r.gen_range(0..2)];
    let e = loop {
        let e: f64 = r.gen_range(-1.0..1.0);
        if [-h / (1.0 - a), 0.0, h / a].iter().all(|j| (e - j).abs() > 1e-4) {
            break e;
        }
    };
    let p = RiskProbability::new(a).unwrap();
    let num = numeric_grad(&[e], &|x| huber_quantile(x[0], p, h).unwrap());
    let d: f64 = r.gen_range(-3.0..-1e-3);
    let num_s = numeric_grad(&[d], &|x| mono_smooth(x[0]));
    rel_err(&[huber_quantile_grad(e, a, h)], &num).max(rel_err(&[mono_smooth_grad(d)], &num_s))
}

pub fn gradient_cases() -> Vec<Case> {
    vec![
        ("matmul", case_matmul),
        ("bias/add/sub/scale", case_bias_add_sub_scale),
        ("relu", case_relu),
        ("leaky_relu", case_leaky),
        ("tanh", case_tanh),
        ("elu", case_elu),
        ("softplus", case_softplus),
        ("mono_smooth", case_mono_smooth),
        ("concat/upsample/slice/column/mul_const", case_shape_ops),
        ("partial_conv", case_partial_conv),
        ("huber_quantile", case_huber),
        ("l1_target", case_l1),
        ("gaussian_nll", case_nll),
        ("detach", case_detach),
        ("mlp model", case_mlp_model),
        ("encoder-decoder model", case_encdec_model),
        ("var_loss_field", case_var_loss_field),
        ("cvar_residual_loss_field", case_cvar_loss_field),
        ("scalar losses", case_scalar_losses),
    ]
}

/// Worst error of `case` over `TRIALS` seeded trials.
pub fn run_case(name: &str, case: fn(&mut ChaCha8Rng) -> f64) -> f64 {
    let seed = name.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut r = rng(seed);
    (0..TRIALS).map(|_| case(&mut r)).fold(0.0, f64::max)
}

// ---- independent risk oracles ----

/// Sorted-sample VaR: the smallest order statistic `x₍ₖ₎` with `k/N > α`.
pub fn oracle_empirical_var(samples: &[f64], alpha: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    for k in 1..=n {
        if k as f64 / n as f64 > alpha {
            return s[k - 1];
        }
    }
    s[n - 1]
}

/// Mean of the samples at or above the empirical VaR.
pub fn oracle_empirical_cvar(samples: &[f64], alpha: f64) -> f64 {
    let v = oracle_empirical_var(samples, alpha);
    let tail: Vec<f64> = samples.iter().copied().filter(|&x| x >= v).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// `(weight, mean, std)` triples.
pub type Mix = Vec<(f64, f64, f64)>;

pub fn mix_cdf(m: &Mix, z: f64) -> f64 {
    m.iter().map(|&(w, mu, s)| w * Normal::new(mu, s).unwrap().cdf(z)).sum()
}

/// Quantile by bisection on the statrs CDF.
pub fn mix_var(m: &Mix, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mix_cdf(m, mid) > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form Gaussian partial expectations `E[Y; Y ≥ v] / (1 − α)`.
pub fn mix_cvar(m: &Mix, alpha: f64) -> f64 {
    let v = mix_var(m, alpha);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mass: f64 = m.iter().map(|&(w, mu, s)| w * (1.0 - std.cdf((v - mu) / s))).sum();
    let pe: f64 = m
        .iter()
        .map(|&(w, mu, s)| {
            let z = (v - mu) / s;
            w * (mu * (1.0 - std.cdf(z)) + s * std.pdf(z))
        })
        .sum();
    pe / mass
}

/// VaR / CVaR of `clamp(Y, 0, 1)` by midpoint integration of the
/// quantile function of the clamped variable over `u ∈ [α, 1]`.
pub fn clamped_mix_var_cvar(m: &Mix, alpha: f64) -> (f64, f64) {
    let q = |u: f64| mix_var(m, u).clamp(0.0, 1.0);
    let var = q(alpha);
    let n = 2000;
    let mut acc = 0.0;
    for i in 0..n {
        // midpoint rule; the clamp keeps the integrand bounded near u = 1
        let u = alpha + (1.0 - alpha) * (i as f64 + 0.5) / n as f64;
        acc += q(u);
    }
    (var, acc / n as f64)
}

/// The toy fixture's law at `x`, written out independently of the library.
pub fn toy_law(x: f64) -> Mix {
    vec![
        (0.5, (2.0 * x).sin(), 0.1 + 0.1 * x.abs()),
        (0.5, (2.0 * x).sin() + 2.0 + x / 4.0, 0.3),
    ]
}

// ---- dense convolution reference ----

/// Zero-padded dense convolution of `x: [C, H, W]`, weight `[O, C, k, k]`.
pub fn dense_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom, (h, wd): (usize, usize)) -> (Vec<f64>, (usize, usize)) {
    let k = g.kernel;
    let ho = (h + 2 * g.padding - k) / g.stride + 1;
    let wo = (wd + 2 * g.padding - k) / g.stride + 1;
    let mut y = vec![0.0; g.out_ch * ho * wo];
    for o in 0..g.out_ch {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b[o];
                for c in 0..g.in_ch {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += w[((o * g.in_ch + c) * k + ky) * k + kx] * x[(c * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                y[(o * ho + oy) * wo + ox] = s;
            }
        }
    }
    (y, (ho, wo))
}

/// Whether output position `(oy, ox)` reads only in-bounds input cells.
pub fn interior(g: &ConvGeom, (h, w): (usize, usize), oy: usize, ox: usize) -> bool {
    let y0 = (oy * g.stride) as isize - g.padding as isize;
    let x0 = (ox * g.stride) as isize - g.padding as isize;
    y0 >= 0 && x0 >= 0 && y0 + g.kernel as isize <= h as isize && x0 + g.kernel as isize <= w as isize
}

/// Worst relative deviation between the all-ones-mask partial convolution
/// and the dense reference over one random configuration.
pub fn pconv_identity_trial<R: Rng>(r: &mut R) -> f64 {
    use riskmap::nn::conv::partial_conv_forward;
    let geom = ConvGeom {
        in_ch: r.gen_range(1..4),
        out_ch: r.gen_range(1..4),
        kernel: [1, 3, 5][r.gen_range(0..3)],
        stride: r.gen_range(1..3),
        padding: r.gen_range(0..3),
    };
    let (h, w) = (r.gen_range(5..12), r.gen_range(5..12));
    let x = rand_vec(r, geom.in_ch * h * w, -1.0, 1.0);
    let wt = rand_vec(r, geom.out_ch * geom.in_ch * geom.kernel * geom.kernel, -1.0, 1.0);
    let b = rand_vec(r, geom.out_ch, -1.0, 1.0);
    let (y, _, cache) = partial_conv_forward(&x, &vec![1.0; h * w], &wt, &b, geom, (h, w)).unwrap();
    let (yd, (ho, wo)) = dense_conv(&x, &wt, &b, &geom, (h, w));
    assert_eq!(cache.out_hw, (ho, wo));
    let mut worst: f64 = 0.0;
    for o in 0..geom.out_ch {
        for oy in 0..ho {
            for ox in 0..wo {
                if !interior(&geom, (h, w), oy, ox) {
                    continue;
                }
                let i = (o * ho + oy) * wo + ox;
                worst = worst.max((y[i] - yd[i]).abs() / yd[i].abs().max(1e-3));
            }
        }
    }
    worst
}
