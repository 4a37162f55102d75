//! Training loop for row (toy) and grid models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RowSet;
use crate::error::{Result, RiskError};
use crate::grid::RiskGrid;
use crate::losses::{alpha_stencil, FiniteDifference, LossBreakdown, LossWeights};
use crate::par;
use crate::pipeline::augment::{augment_sample, AugmentOps};
use crate::pipeline::LabeledSample;

use super::adam::{Adam, AdamConfig};
use super::alpha::smoothed_alpha_field;
use super::graph::{Activation, Graph, Var};
use super::model::{rows_input, HeadKind, InputNorm, RawOutput, RiskModel, Routing, LOG_SIGMA_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Smoothed quantile loss, residual CVaR loss and monotonic penalty.
    Cvar,
    /// Single output trained with `|pred − R|`.
    L1Baseline,
    /// Mean and log-std trained with the Gaussian negative log-likelihood.
    GaussianNllBaseline,
}

impl LossMode {
    pub fn head(self) -> HeadKind {
        match self {
            LossMode::Cvar => HeadKind::Risk,
            LossMode::L1Baseline => HeadKind::Single,
            LossMode::GaussianNllBaseline => HeadKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Samples per step: grid images, or rows for row models.
    pub batch_size: usize,
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub epochs: usize,
    pub augmentation: AugmentOps,
    pub loss_mode: LossMode,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
    pub fd_delta: f64,
    pub fd_scheme: FiniteDifference,
    /// Blur width of the random α pattern for grid models, in cells.
    pub alpha_sigma: f64,
    pub routing: Routing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 1,
            split: (0.90, 0.05, 0.05),
            seed: 0,
            epochs: 50,
            augmentation: AugmentOps::default(),
            loss_mode: LossMode::Cvar,
            patience: 10,
            lr_decay: 1.0,
            fd_delta: 0.01,
            fd_scheme: FiniteDifference::Central,
            alpha_sigma: 8.0,
            routing: Routing::Auto,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(RiskError::invalid(format!("split {:?} must be fractions summing to 1", self.split)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RiskError::invalid("learning_rate must be > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(RiskError::invalid("batch_size and epochs must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(RiskError::invalid("lr_decay must be in (0, 1]"));
        }
        if !(self.fd_delta > 0.0 && self.fd_delta < 0.5) {
            return Err(RiskError::invalid("fd_delta must be in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` cut into train / validation / test indices.
pub fn split_indices(n: usize, split: (f64, f64, f64), seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17));
    let n_train = ((n as f64 * split.0).round() as usize).clamp(n.min(1), n);
    let n_val = ((n as f64 * split.1).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}

/// Training inputs: labelled rows or labelled grid samples.
#[derive(Clone, Copy)]
pub enum TrainData<'a> {
    Rows(&'a RowSet),
    Grid(&'a [LabeledSample]),
}

impl TrainData<'_> {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Rows(r) => r.len(),
            TrainData::Grid(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl TrainReport {
    /// Per-epoch history as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,learning_rate,train_var,train_cvar,train_mono,train_total,val_var,val_cvar,val_mono,val_total\n",
        );
        for r in &self.history {
            let v = r.val.unwrap_or(LossBreakdown {
                var_term: f64::NAN,
                cvar_term: f64::NAN,
                mono_term: f64::NAN,
                total: f64::NAN,
                pixel_count: 0,
            });
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.learning_rate,
                r.train.var_term,
                r.train.cvar_term,
                r.train.mono_term,
                r.train.total,
                v.var_term,
                v.cvar_term,
                v.mono_term,
                v.total
            ));
        }
        s
    }
}

/// Pixel-weighted running mean of loss breakdowns.
#[derive(Default)]
struct LossMeter {
    sums: [f64; 4],
    n: usize,
}

impl LossMeter {
    fn add(&mut self, b: &LossBreakdown) {
        let k = b.pixel_count as f64;
        self.sums[0] += k * b.var_term;
        self.sums[1] += k * b.cvar_term;
        self.sums[2] += k * b.mono_term;
        self.sums[3] += k * b.total;
        self.n += b.pixel_count;
    }

    fn mean(&self) -> LossBreakdown {
        let d = self.n.max(1) as f64;
        LossBreakdown {
            var_term: self.sums[0] / d,
            cvar_term: self.sums[1] / d,
            mono_term: self.sums[2] / d,
            total: self.sums[3] / d,
            pixel_count: self.n,
        }
    }
}

/// Builds the training objective of one example on `g`.
///
/// `fwd` records a forward pass for a given per-cell α vector.
#[allow(clippy::too_many_arguments)]
fn objective<'p, F>(
    g: &mut Graph<'p>,
    mode: LossMode,
    fwd: F,
    r: &[f64],
    alpha: &[f64],
    mask: &[f64],
    fd: Option<(Vec<f64>, Vec<f64>)>,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)>
where
    F: Fn(&mut Graph<'p>, &[f64]) -> Result<RawOutput>,
{
    let out = fwd(g, alpha)?;
    let m: Vec<f64> = mask
        .iter()
        .zip(&out.mask)
        .map(|(&a, &b)| if a != 0.0 && b != 0.0 { 1.0 } else { 0.0 })
        .collect();
    let count = m.iter().filter(|&&v| v != 0.0).count();
    if count == 0 {
        return Err(RiskError::EmptyMask);
    }
    let scalar = |g: &Graph<'p>, v: Var| g.value(v).item();
    match mode {
        LossMode::Cvar => {
            let v = out.channels[0];
            let c_hat = g.act(out.channels[1], Activation::Softplus);
            let hub = g.huber_quantile(v, r, alpha, w.huber_h)?;
            let var = g.masked_mean(hub, &m)?;
            let vd = g.value(v).data().to_vec();
            let target: Vec<f64> = r.iter().zip(&vd).map(|(r, v)| r - v).collect();
            let tail: Vec<f64> = r.iter().zip(&vd).map(|(r, v)| if r >= v { 1.0 } else { 0.0 }).collect();
            let l1 = g.l1_target(c_hat, &target, &tail)?;
            let cvar = g.masked_mean(l1, &m)?;
            let mut terms = vec![(var, w.lambda_v), (cvar, w.lambda_c)];
            let mut mono_value = 0.0;
            if let Some((lo, hi)) = fd.filter(|_| w.lambda_m > 0.0) {
                // one-sided stencils share the pass at α and need one more
                let one_sided = lo.iter().zip(&hi).zip(alpha).all(|((l, h), a)| l == a || h == a);
                let (dv, dc) = if one_sided {
                    let other: Vec<f64> = lo.iter().zip(&hi).zip(alpha).map(|((&l, &h), &a)| if l == a { h } else { l }).collect();
                    let inv: Vec<f64> = other.iter().zip(alpha).map(|(o, a)| if o != a { 1.0 / (o - a) } else { 0.0 }).collect();
                    let o = fwd(g, &other)?;
                    let sp = g.act(o.channels[1], Activation::Softplus);
                    let c_other = g.add(o.channels[0], sp)?;
                    let c = g.add(v, c_hat)?;
                    let dv = g.sub(o.channels[0], v)?;
                    let dc = g.sub(c_other, c)?;
                    (g.mul_const(dv, &inv)?, g.mul_const(dc, &inv)?)
                } else {
                    let inv: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| if h > l { 1.0 / (h - l) } else { 0.0 }).collect();
                    let mut heads = Vec::with_capacity(2);
                    for a in [&lo, &hi] {
                        let o = fwd(g, a)?;
                        let sp = g.act(o.channels[1], Activation::Softplus);
                        heads.push((o.channels[0], g.add(o.channels[0], sp)?));
                    }
                    let dv = g.sub(heads[1].0, heads[0].0)?;
                    let dc = g.sub(heads[1].1, heads[0].1)?;
                    (g.mul_const(dv, &inv)?, g.mul_const(dc, &inv)?)
                };
                let sv = g.mono_smooth(dv);
                let sc = g.mono_smooth(dc);
                let s = g.add(sv, sc)?;
                let mono = g.masked_mean(s, &m)?;
                mono_value = scalar(g, mono);
                terms.push((mono, w.lambda_m));
            }
            let total = g.weighted_sum(&terms)?;
            let b = LossBreakdown {
                var_term: scalar(g, var),
                cvar_term: scalar(g, cvar),
                mono_term: mono_value,
                total: scalar(g, total),
                pixel_count: count,
            };
            Ok((total, b))
        }
        LossMode::L1Baseline => {
            let ones = vec![1.0; r.len()];
            let l1 = g.l1_target(out.channels[0], r, &ones)?;
            let total = g.masked_mean(l1, &m)?;
            let t = scalar(g, total);
            Ok((total, LossBreakdown { var_term: t, cvar_term: 0.0, mono_term: 0.0, total: t, pixel_count: count }))
        }
        LossMode::GaussianNllBaseline => {
            let log_sigma = bound_log_sigma(g, out.channels[1]);
            let nll = g.gaussian_nll(out.channels[0], log_sigma, r)?;
            let total = g.masked_mean(nll, &m)?;
            let t = scalar(g, total);
            Ok((total, LossBreakdown { var_term: t, cvar_term: 0.0, mono_term: 0.0, total: t, pixel_count: count }))
        }
    }
}

/// Graph form of [`bounded_log_sigma`].
fn bound_log_sigma(g: &mut Graph<'_>, raw: Var) -> Var {
    let t = g.scale(raw, 1.0 / LOG_SIGMA_BOUND);
    let t = g.act(t, Activation::Tanh);
    g.scale(t, LOG_SIGMA_BOUND)
}

fn stencil(alpha: &[f64], cfg: &TrainConfig) -> (Vec<f64>, Vec<f64>) {
    let a = RiskGrid::from_vec(alpha.len(), 1, alpha.to_vec()).expect("row alpha");
    let (lo, hi) = alpha_stencil(&a, cfg.fd_delta, cfg.fd_scheme);
    (lo.into_vec(), hi.into_vec())
}

/// Loss and parameter gradients of one row batch.
fn rows_step(
    model: &RiskModel,
    set: &RowSet,
    rows: &[usize],
    alpha: &[f64],
    cfg: &TrainConfig,
    w: &LossWeights,
    need_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<Vec<f64>>>)> {
    let d = set.state_dim;
    let mut states = Vec::with_capacity(rows.len() * d);
    let mut r = Vec::with_capacity(rows.len());
    for &i in rows {
        states.extend_from_slice(set.state(i));
        r.push(set.y[i]);
    }
    let mask = vec![1.0; rows.len()];
    let fd = Some(stencil(alpha, cfg));
    let mut g = Graph::new(model.params());
    let fwd = |g: &mut Graph<'_>, a: &[f64]| {
        let x = rows_input(&states, a, d)?;
        model.forward_rows_routed(g, &x, cfg.routing)
    };
    let (out, b) = objective(&mut g, cfg.loss_mode, fwd, &r, alpha, &mask, fd, w)?;
    let grads = if need_grad { Some(g.backward(out)?) } else { None };
    Ok((b, grads))
}

/// Loss and parameter gradients of one grid sample with α field `alpha`.
fn grid_step(
    model: &RiskModel,
    s: &LabeledSample,
    alpha: &RiskGrid,
    cfg: &TrainConfig,
    w: &LossWeights,
    need_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<Vec<f64>>>)> {
    let (wd, ht) = s.cost.shape();
    let fd = Some(stencil(alpha.data(), cfg));
    let mut g = Graph::new(model.params());
    let fwd = |g: &mut Graph<'_>, a: &[f64]| {
        let a = RiskGrid::from_vec(wd, ht, a.to_vec())?;
        model.forward_grid_routed(g, s.features.channels(), &a, &s.mask, cfg.routing)
    };
    let (out, b) = objective(&mut g, cfg.loss_mode, fwd, s.cost.data(), alpha.data(), s.mask.data(), fd, w)?;
    let grads = if need_grad { Some(g.backward(out)?) } else { None };
    Ok((b, grads))
}

fn add_scaled(acc: &mut [Vec<f64>], g: &[Vec<f64>], s: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += s * y;
        }
    }
}

fn check_finite(grads: &[Vec<f64>]) -> Result<()> {
    if grads.iter().flatten().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(RiskError::NumericFailure("non-finite gradient".into()))
    }
}

/// Validation loss with α drawn from a fixed stream so epochs are comparable.
fn evaluate(model: &RiskModel, data: TrainData<'_>, idx: &[usize], cfg: &TrainConfig, w: &LossWeights) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa1fa_5eed);
    let mut meter = LossMeter::default();
    match data {
        TrainData::Rows(set) => {
            let alpha: Vec<f64> = idx.iter().map(|_| rng.gen()).collect();
            for (rows, a) in idx.chunks(4096).zip(alpha.chunks(4096)) {
                meter.add(&rows_step(model, set, rows, a, cfg, w, false)?.0);
            }
        }
        TrainData::Grid(samples) => {
            let seeds: Vec<u64> = idx.iter().map(|_| rng.gen()).collect();
            let jobs: Vec<(usize, u64)> = idx.iter().copied().zip(seeds).collect();
            let res = par::map_slice(&jobs, |&(i, seed)| {
                let s = &samples[i];
                let (wd, ht) = s.cost.shape();
                let a = smoothed_alpha_field(wd, ht, cfg.alpha_sigma, &mut ChaCha8Rng::seed_from_u64(seed));
                grid_step(model, s, &a, cfg, w, false)
            });
            for r in res {
                meter.add(&r?.0);
            }
        }
    }
    Ok(meter.mean())
}

/// Trains `model` in place and keeps the parameters of the best validation
/// epoch (or the last epoch when there is no validation split).
pub fn train(model: &mut RiskModel, data: TrainData<'_>, cfg: &TrainConfig, w: &LossWeights) -> Result<TrainReport> {
    cfg.validate()?;
    w.validate()?;
    if data.is_empty() {
        return Err(RiskError::invalid("empty dataset"));
    }
    if model.head() != cfg.loss_mode.head() {
        return Err(RiskError::invalid(format!(
            "loss mode {:?} needs a {:?} head, model has {:?}",
            cfg.loss_mode,
            cfg.loss_mode.head(),
            model.head()
        )));
    }
    match data {
        TrainData::Rows(_) if model.is_grid() => return Err(RiskError::invalid("row data for a grid model")),
        TrainData::Grid(_) if !model.is_grid() => return Err(RiskError::invalid("grid data for a row model")),
        _ => {}
    }
    let (train_idx, val_idx, test_idx) = split_indices(data.len(), cfg.split, cfg.seed);
    if model.config().input_norm.is_none() {
        let n = model.config().input_count();
        let norm = match data {
            TrainData::Rows(set) => InputNorm::fit(n, train_idx.iter().flat_map(|&i| set.state(i).iter().copied().enumerate())),
            TrainData::Grid(samples) => InputNorm::fit(
                n,
                train_idx.iter().flat_map(|&i| {
                    let s = &samples[i];
                    let mask = s.mask.data();
                    s.features
                        .channels()
                        .iter()
                        .enumerate()
                        .flat_map(move |(k, c)| c.data().iter().zip(mask).filter(|(_, &m)| m != 0.0).map(move |(&v, _)| (k, v)))
                }),
            ),
        };
        model.set_input_norm(Some(norm))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() }, model.params())?;
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut stopped_early = false;
    let n_params = model.params().len();

    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut meter = LossMeter::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            match data {
                TrainData::Rows(set) => {
                    let alpha: Vec<f64> = batch.iter().map(|_| rng.gen()).collect();
                    let (b, g) = rows_step(model, set, batch, &alpha, cfg, w, true)?;
                    meter.add(&b);
                    add_scaled(&mut grads, &g.expect("gradient"), 1.0);
                }
                TrainData::Grid(samples) => {
                    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
                    let jobs: Vec<(usize, u64)> = batch.iter().copied().zip(seeds).collect();
                    let model_ref = &*model;
                    let res = par::map_slice(&jobs, |&(i, seed)| {
                        let mut srng = ChaCha8Rng::seed_from_u64(seed);
                        let aug;
                        let s = if cfg.augmentation.any() {
                            aug = augment_sample(&samples[i], &cfg.augmentation, &mut srng)?;
                            &aug
                        } else {
                            &samples[i]
                        };
                        let (wd, ht) = s.cost.shape();
                        let a = smoothed_alpha_field(wd, ht, cfg.alpha_sigma, &mut srng);
                        grid_step(model_ref, s, &a, cfg, w, true)
                    });
                    let k = 1.0 / batch.len() as f64;
                    for r in res {
                        let (b, g) = match r {
                            Err(RiskError::EmptyMask) => continue,
                            other => other?,
                        };
                        meter.add(&b);
                        add_scaled(&mut grads, &g.expect("gradient"), k);
                    }
                }
            }
            debug_assert_eq!(grads.len(), n_params);
            check_finite(&grads)?;
            opt.step(model.params_mut(), &grads)?;
        }
        let train_loss = meter.mean();
        let val = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate(model, data, &val_idx, cfg, w)?)
        };
        history.push(EpochRecord { epoch, learning_rate: opt.config.lr, train: train_loss, val });
        let score = val.map_or(train_loss.total, |v| v.total);
        if !score.is_finite() {
            return Err(RiskError::NumericFailure(format!("loss diverged at epoch {epoch}")));
        }
        if score < best.0 {
            best = (score, epoch, model.params().to_vec());
        } else if epoch - best.1 >= cfg.patience {
            stopped_early = true;
            break;
        }
        opt.config.lr *= cfg.lr_decay;
    }
    model.params_mut().clone_from_slice(&best.2);
    Ok(TrainReport {
        history,
        best_epoch: best.1,
        stopped_early,
        train_idx,
        val_idx,
        test_idx,
    })
}
