//! Empirical risk measures and calibration / goodness-of-fit metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{check_shapes, RiskGrid};
use crate::losses::{pinball, RiskProbability};
use crate::par;

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(RiskError::invalid("empty sample set"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(RiskError::invalid("NaN in samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// 1-based rank `k` of the order statistic equal to `inf{z : P̂(R < z) > α}`,
/// i.e. the smallest `k` with `k/N > α`, capped at `N` for `α = 1`.
fn quantile_rank(n: usize, alpha: f64) -> usize {
    let nf = n as f64;
    let mut k = (alpha * nf).floor().max(0.0) as usize;
    while k <= n && k as f64 / nf <= alpha {
        k += 1;
    }
    while k > 1 && (k - 1) as f64 / nf > alpha {
        k -= 1;
    }
    k.clamp(1, n)
}

fn var_of_sorted(s: &[f64], alpha: f64) -> f64 {
    s[quantile_rank(s.len(), alpha) - 1]
}

fn cvar_of_sorted(s: &[f64], var: f64) -> f64 {
    let start = s.partition_point(|&v| v < var);
    let tail = &s[start..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Empirical value-at-risk: `inf{z : P̂(R < z) > α}` over the sample CDF.
///
/// For `{1, …, 10}` and `α = 0.7` this is 8. At `α = 1` the set is empty and
/// the largest sample is returned.
pub fn empirical_var(samples: &[f64], alpha: RiskProbability) -> Result<f64> {
    let s = sorted(samples)?;
    Ok(var_of_sorted(&s, alpha.value()))
}

/// Empirical conditional value-at-risk: mean of samples `≥` the empirical VaR.
pub fn empirical_cvar(samples: &[f64], alpha: RiskProbability) -> Result<f64> {
    let s = sorted(samples)?;
    let var = var_of_sorted(&s, alpha.value());
    Ok(cvar_of_sorted(&s, var))
}

/// Constant VaR / CVaR predictors fitted on pooled training labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBaseline {
    pub alpha: RiskProbability,
    pub var_bar: f64,
    pub cvar_bar: f64,
}

pub fn compute_baseline(training: &[f64], alpha: RiskProbability) -> Result<QuantileBaseline> {
    let s = sorted(training)?;
    let var_bar = var_of_sorted(&s, alpha.value());
    Ok(QuantileBaseline {
        alpha,
        var_bar,
        cvar_bar: cvar_of_sorted(&s, var_bar),
    })
}

/// Baselines for several α levels from one sort of the training labels.
pub fn compute_baselines(training: &[f64], alphas: &[f64]) -> Result<Vec<QuantileBaseline>> {
    let s = sorted(training)?;
    alphas
        .iter()
        .map(|&a| {
            let alpha = RiskProbability::new(a)?;
            let var_bar = var_of_sorted(&s, a);
            Ok(QuantileBaseline {
                alpha,
                var_bar,
                cvar_bar: cvar_of_sorted(&s, var_bar),
            })
        })
        .collect()
}

/// Additive sufficient statistics for the three metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub hits: usize,
    pub cells: usize,
    pub pinball_model: f64,
    pub pinball_baseline: f64,
    pub cvar_err_model: f64,
    pub cvar_err_baseline: f64,
}

impl MetricSums {
    pub fn merge(mut self, o: &MetricSums) -> Self {
        self.hits += o.hits;
        self.cells += o.cells;
        self.pinball_model += o.pinball_model;
        self.pinball_baseline += o.pinball_baseline;
        self.cvar_err_model += o.cvar_err_model;
        self.cvar_err_baseline += o.cvar_err_baseline;
        self
    }

    /// Accumulates one aligned `(R, V, C)` triple set over its mask.
    pub fn accumulate(
        &mut self,
        r: &RiskGrid,
        v: &RiskGrid,
        c: &RiskGrid,
        mask: &RiskGrid,
        baseline: &QuantileBaseline,
    ) -> Result<()> {
        check_shapes(&[r, v, c, mask])?;
        let a = baseline.alpha.value();
        if a >= 1.0 {
            return Err(RiskError::invalid("CVaR error undefined at alpha = 1"));
        }
        let tail = 1.0 / (1.0 - a);
        let (vb, cb) = (baseline.var_bar, baseline.cvar_bar);
        for i in 0..r.len() {
            if mask.data()[i] == 0.0 {
                continue;
            }
            let (ri, vi, ci) = (r.data()[i], v.data()[i], c.data()[i]);
            self.cells += 1;
            if ri <= vi {
                self.hits += 1;
            }
            self.pinball_model += pinball(ri - vi, a);
            self.pinball_baseline += pinball(ri - vb, a);
            self.cvar_err_model += (ci - (vi + tail * (ri - vi).max(0.0))).abs();
            self.cvar_err_baseline += (cb - (vb + tail * (ri - vb).max(0.0))).abs();
        }
        Ok(())
    }

    pub fn implied_alpha(&self) -> Result<f64> {
        if self.cells == 0 {
            return Err(RiskError::EmptyMask);
        }
        Ok(self.hits as f64 / self.cells as f64)
    }

    pub fn r2_var(&self) -> Result<f64> {
        ratio_r2(self.pinball_model, self.pinball_baseline, "VaR")
    }

    pub fn r2_cvar(&self) -> Result<f64> {
        ratio_r2(self.cvar_err_model, self.cvar_err_baseline, "CVaR")
    }
}

fn ratio_r2(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        return Err(RiskError::DegenerateData(format!("{what} pseudo-R2 baseline error is zero")));
    }
    Ok(1.0 - num / den)
}

fn check_stacks(a: &[RiskGrid], b: &[RiskGrid], mask: &[RiskGrid]) -> Result<()> {
    if a.len() != b.len() || a.len() != mask.len() {
        return Err(RiskError::invalid("stacks differ in length"));
    }
    for ((x, y), m) in a.iter().zip(b).zip(mask) {
        check_shapes(&[x, y, m])?;
    }
    Ok(())
}

/// Fraction of mask-true cells, over all samples, where `R ≤ V`.
pub fn implied_alpha(r: &[RiskGrid], v: &[RiskGrid], mask: &[RiskGrid]) -> Result<f64> {
    check_stacks(r, v, mask)?;
    let (mut hits, mut n) = (0usize, 0usize);
    for ((rg, vg), mg) in r.iter().zip(v).zip(mask) {
        for i in 0..rg.len() {
            if mg.data()[i] != 0.0 {
                n += 1;
                if rg.data()[i] <= vg.data()[i] {
                    hits += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(RiskError::EmptyMask);
    }
    Ok(hits as f64 / n as f64)
}

/// Quantile pseudo-R²: one minus the ratio of model to baseline pinball loss.
pub fn r2_var(r: &[RiskGrid], v: &[RiskGrid], baseline: &QuantileBaseline, mask: &[RiskGrid]) -> Result<f64> {
    check_stacks(r, v, mask)?;
    let a = baseline.alpha.value();
    let (mut num, mut den) = (0.0, 0.0);
    for ((rg, vg), mg) in r.iter().zip(v).zip(mask) {
        for i in 0..rg.len() {
            if mg.data()[i] != 0.0 {
                num += pinball(rg.data()[i] - vg.data()[i], a);
                den += pinball(rg.data()[i] - baseline.var_bar, a);
            }
        }
    }
    ratio_r2(num, den, "VaR")
}

/// CVaR pseudo-R² against the tail-expectation surrogate `V + (R − V)₊/(1 − α)`.
pub fn r2_cvar(
    r: &[RiskGrid],
    v: &[RiskGrid],
    c: &[RiskGrid],
    baseline: &QuantileBaseline,
    mask: &[RiskGrid],
) -> Result<f64> {
    check_stacks(r, v, mask)?;
    check_stacks(r, c, mask)?;
    let mut sums = MetricSums::default();
    for i in 0..r.len() {
        sums.accumulate(&r[i], &v[i], &c[i], &mask[i], baseline)?;
    }
    sums.r2_cvar()
}

/// Metrics of one model at one α level.
///
/// The pseudo-R² fields are `None` when the baseline error is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub alpha: RiskProbability,
    pub implied_alpha: f64,
    pub r2_var: Option<f64>,
    pub r2_cvar: Option<f64>,
    pub n_cells: usize,
}

impl MetricReport {
    pub fn from_sums(alpha: RiskProbability, sums: &MetricSums) -> Result<Self> {
        let degenerate_ok = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(RiskError::DegenerateData(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(MetricReport {
            alpha,
            implied_alpha: sums.implied_alpha()?,
            r2_var: degenerate_ok(sums.r2_var())?,
            r2_cvar: degenerate_ok(sums.r2_cvar())?,
            n_cells: sums.cells,
        })
    }
}

/// One row of a sweep table; `sample_id == None` is the pooled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sample_id: Option<String>,
    pub report: MetricReport,
}

/// Labels and mask of one evaluation sample.
#[derive(Debug, Clone, Copy)]
pub struct EvalSample<'a> {
    pub id: &'a str,
    pub label: &'a RiskGrid,
    pub mask: &'a RiskGrid,
}

/// Default α grid `{0.05, 0.10, …, 0.95}`.
pub fn default_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Evaluates `predict(sample_index, α) -> (V, C)` on every sample and α.
///
/// Baselines are fitted per α on `training` labels. Returns, for each α in
/// order, one row per sample followed by the pooled row. Samples with an empty
/// mask are skipped in the per-sample rows but cannot make the pooled row
/// empty unless all are empty.
pub fn metric_sweep<P>(samples: &[EvalSample<'_>], training: &[f64], alphas: &[f64], predict: P) -> Result<Vec<SweepRow>>
where
    P: Fn(usize, f64) -> Result<(RiskGrid, RiskGrid)> + Sync + Send,
{
    let baselines = compute_baselines(training, alphas)?;
    let pairs: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..samples.len()).map(move |s| (a, s)))
        .collect();
    let sums: Vec<Result<MetricSums>> = par::map_slice(&pairs, |&(ai, si)| {
        let s = &samples[si];
        let (v, c) = predict(si, alphas[ai])?;
        let mut acc = MetricSums::default();
        acc.accumulate(s.label, &v, &c, s.mask, &baselines[ai])?;
        Ok(acc)
    });
    let sums: Vec<MetricSums> = sums.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(alphas.len() * (samples.len() + 1));
    for (ai, base) in baselines.iter().enumerate() {
        let chunk = &sums[ai * samples.len()..(ai + 1) * samples.len()];
        for (s, acc) in samples.iter().zip(chunk) {
            if acc.cells == 0 {
                continue;
            }
            rows.push(SweepRow {
                sample_id: Some(s.id.to_string()),
                report: MetricReport::from_sums(base.alpha, acc)?,
            });
        }
        let pooled = chunk.iter().fold(MetricSums::default(), |a, b| a.merge(b));
        rows.push(SweepRow {
            sample_id: None,
            report: MetricReport::from_sums(base.alpha, &pooled)?,
        });
    }
    Ok(rows)
}

/// Pooled rows of a sweep, in α order.
pub fn pooled(rows: &[SweepRow]) -> Vec<MetricReport> {
    rows.iter()
        .filter(|r| r.sample_id.is_none())
        .map(|r| r.report)
        .collect()
}

/// Mean `|I_α − α|` over the pooled rows.
pub fn calibration_error(rows: &[SweepRow]) -> f64 {
    let p = pooled(rows);
    p.iter()
        .map(|r| (r.implied_alpha - r.alpha.value()).abs())
        .sum::<f64>()
        / p.len().max(1) as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "degenerate".to_string(), |x| format!("{x:.6}"))
}

/// Writes `alpha,sample_id,implied_alpha,r2_var,r2_cvar,n_cells`; the pooled row
/// uses sample id `ALL`. Degenerate pseudo-R² values are written as `degenerate`.
pub fn write_metrics_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "alpha,sample_id,implied_alpha,r2_var,r2_cvar,n_cells")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            out,
            "{:.4},{},{:.6},{},{},{}",
            r.alpha.value(),
            row.sample_id.as_deref().unwrap_or("ALL"),
            r.implied_alpha,
            fmt_opt(r.r2_var),
            fmt_opt(r.r2_cvar),
            r.n_cells
        )?;
    }
    Ok(())
}
