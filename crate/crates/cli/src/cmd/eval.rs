use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use riskmap::metrics::{calibration_error, default_alphas, metric_sweep, pooled, write_metrics_csv, EvalSample, SweepRow};
use riskmap::nn::checkpoint::load_checkpoint;
use riskmap::nn::train::split_indices;
use riskmap::nn::{RiskModel, TrainConfig};
use riskmap::pipeline::LabeledSample;
use riskmap::synth::mixture_var_cvar;
use riskmap::synth::terrain::{label_moments, OracleTable};
use riskmap::{RiskGrid, RiskProbability};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cmd::gen_data::{DataKind, GenDataConfig};
use crate::cmd::train::Data;
use crate::config::{resolve, write_config};
use crate::error::{io_err, CliError, CliResult};
use crate::Ctx;

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Test indices of the first checkpoint's training split.
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub data: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub out: PathBuf,
    pub alphas: Vec<f64>,
    pub split: EvalSplit,
    /// Gaussian comparator from per-world label moments (terrain sets).
    pub handcrafted: bool,
    /// Exact oracle comparator, when the data's generating config is present.
    pub truth: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            data: PathBuf::from("data"),
            checkpoints: vec![],
            out: PathBuf::from("eval"),
            alphas: default_alphas(),
            split: EvalSplit::Test,
            handcrafted: true,
            truth: true,
            seed: 0,
        }
    }
}

const ALIASES: &[(&str, &str)] = &[("checkpoint", "checkpoints"), ("alpha", "alphas")];

pub struct Comparator {
    pub name: String,
    pub rows: Vec<SweepRow>,
}

fn unique_name(names: &[Comparator], base: &str) -> String {
    let mut name = base.to_string();
    let mut k = 2;
    while names.iter().any(|c| c.name == name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

fn grid_pair(v: Vec<f64>, c: Vec<f64>) -> riskmap::Result<(RiskGrid, RiskGrid)> {
    let n = v.len();
    Ok((RiskGrid::from_vec(n, 1, v)?, RiskGrid::from_vec(n, 1, c)?))
}

/// Side-by-side pooled metrics, one line per α plus a calibration-error line.
pub fn comparison_csv(comps: &[Comparator]) -> String {
    let mut s = String::from("alpha");
    for c in comps {
        let _ = write!(s, ",{0}_implied_alpha,{0}_r2_var,{0}_r2_cvar", c.name);
    }
    s.push('\n');
    let pooled: Vec<_> = comps.iter().map(|c| pooled(&c.rows)).collect();
    let opt = |v: Option<f64>| v.map_or("degenerate".to_string(), |x| format!("{x:.4}"));
    for i in 0..pooled.first().map_or(0, Vec::len) {
        let _ = write!(s, "{:.2}", pooled[0][i].alpha.value());
        for p in &pooled {
            let r = &p[i];
            let _ = write!(s, ",{:.4},{},{}", r.implied_alpha, opt(r.r2_var), opt(r.r2_cvar));
        }
        s.push('\n');
    }
    s.push_str("calibration_error");
    for c in comps {
        let _ = write!(s, ",{:.4},,", calibration_error(&c.rows));
    }
    s.push('\n');
    s
}

fn print_table(comps: &[Comparator]) {
    let mut head = format!("{:>6}", "alpha");
    for c in comps {
        head += &format!(" | {:^26}", c.name);
    }
    println!("{head}");
    println!("{:>6}{}", "", " | implied   r2_var  r2_cvar  ".repeat(comps.len()));
    let pooled: Vec<_> = comps.iter().map(|c| pooled(&c.rows)).collect();
    let opt = |v: Option<f64>| v.map_or("    n/a".to_string(), |x| format!("{x:7.3}"));
    for i in 0..pooled.first().map_or(0, Vec::len) {
        let mut line = format!("{:>6.2}", pooled[0][i].alpha.value());
        for p in &pooled {
            let r = &p[i];
            line += &format!(" | {:7.3}  {}  {}  ", r.implied_alpha, opt(r.r2_var), opt(r.r2_cvar));
        }
        println!("{line}");
    }
    let mut line = format!("{:>6}", "calib");
    for c in comps {
        line += &format!(" | {:7.3}{:19}", calibration_error(&c.rows), "");
    }
    println!("{line}");
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg: EvalConfig = resolve(&EvalConfig::default(), ctx.file.as_ref(), &ctx.flags, ALIASES)?;
    if cfg.alphas.is_empty() {
        return Err(CliError::usage("--alpha needs at least one value"));
    }
    for &a in &cfg.alphas {
        RiskProbability::new(a)?;
    }
    let data = Data::load(&cfg.data)?;
    let gen = GenDataConfig::load_from(&Data::dir(&cfg.data));
    let models: Vec<(RiskModel, serde_json::Value)> = cfg
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p).map(|(m, man)| (m, man.extra)))
        .collect::<Result<_, _>>()?;

    let (split, seed) = models
        .first()
        .and_then(|(_, extra)| {
            let split = serde_json::from_value(extra.get("split")?.clone()).ok()?;
            Some((split, extra.get("seed")?.as_u64()?))
        })
        .unwrap_or((TrainConfig::default().split, cfg.seed));
    let (train_idx, _, test_idx) = split_indices(data.len(), split, seed);
    let (train_idx, eval_idx) = match cfg.split {
        EvalSplit::Test => (train_idx, test_idx),
        EvalSplit::All => ((0..data.len()).collect(), (0..data.len()).collect()),
    };
    if eval_idx.is_empty() {
        return Err(CliError::usage("evaluation split is empty"));
    }

    let mut comps: Vec<Comparator> = Vec::new();
    let alphas = &cfg.alphas;
    match &data {
        Data::Grid(ds) => {
            let samples: Vec<&LabeledSample> = eval_idx.iter().map(|&i| &ds.samples[i]).collect();
            let eval: Vec<EvalSample> = samples.iter().map(|s| EvalSample { id: &s.id, label: &s.cost, mask: &s.mask }).collect();
            let training: Vec<f64> = train_idx
                .iter()
                .flat_map(|&i| {
                    let s = &ds.samples[i];
                    s.cost.data().iter().zip(s.mask.data()).filter(|(_, &m)| m != 0.0).map(|(&c, _)| c)
                })
                .collect();
            for (model, extra) in &models {
                if !model.is_grid() {
                    return Err(CliError::usage("row-model checkpoint given for a grid dataset"));
                }
                let rows = metric_sweep(&eval, &training, alphas, |si, a| {
                    let s = samples[si];
                    let (w, h) = s.shape();
                    let (v, c, _) = model.predict_costmap(s.features.channels(), &RiskGrid::filled(w, h, a), &s.mask)?;
                    Ok((v, c))
                })?;
                let base = extra.get("loss_mode").and_then(|v| v.as_str()).unwrap_or("model");
                comps.push(Comparator { name: unique_name(&comps, base), rows });
            }
            let worlds: Option<Vec<usize>> = ds.worlds.iter().copied().collect();
            if let (true, Some(worlds)) = (cfg.handcrafted, worlds.as_ref()) {
                let n_worlds = worlds.iter().max().map_or(0, |m| m + 1);
                let train_samples: Vec<&LabeledSample> = train_idx.iter().map(|&i| &ds.samples[i]).collect();
                let train_worlds: Vec<usize> = train_idx.iter().map(|&i| worlds[i]).collect();
                let moments = label_moments(&train_samples, &train_worlds, n_worlds)?;
                let fallback = training.iter().sum::<f64>() / training.len().max(1) as f64;
                let rows = metric_sweep(&eval, &training, alphas, |si, a| moments[worlds[eval_idx[si]]].gaussian_var_cvar(a, fallback))?;
                comps.push(Comparator { name: "handcrafted_gaussian".into(), rows });
            }
            if let (true, Some(worlds), Some(gen)) = (cfg.truth, worlds.as_ref(), gen.as_ref().filter(|g| g.kind == DataKind::Terrain)) {
                let set = gen.terrain_worlds()?;
                if set.spec != ds.spec {
                    return Err(CliError::from(riskmap::RiskError::Format("dataset grid differs from its generating config".into())));
                }
                let table = OracleTable::build(&gen.terrain.noise, alphas)?;
                let rows = metric_sweep(&eval, &training, alphas, |si, a| {
                    let k = alphas.iter().position(|&x| x == a).expect("sweep α");
                    let g = &set.worlds[worlds[eval_idx[si]]].geometric;
                    Ok((g.map(|v| table.lookup(v, k).0), g.map(|v| table.lookup(v, k).1)))
                })?;
                comps.push(Comparator { name: "truth".into(), rows });
            }
        }
        Data::Rows(set) => {
            let sub = set.subset(&eval_idx);
            let n = sub.len();
            let label = RiskGrid::from_vec(n, 1, sub.y.clone())?;
            let mask = RiskGrid::filled(n, 1, 1.0);
            let eval = [EvalSample { id: "rows", label: &label, mask: &mask }];
            let training: Vec<f64> = train_idx.iter().map(|&i| set.y[i]).collect();
            for (model, extra) in &models {
                if model.is_grid() {
                    return Err(CliError::usage("grid-model checkpoint given for a row dataset"));
                }
                let rows = metric_sweep(&eval, &training, alphas, |_, a| {
                    let (v, c) = model.predict_rows(&sub.x, &vec![a; n])?;
                    grid_pair(v, c)
                })?;
                let base = extra.get("loss_mode").and_then(|v| v.as_str()).unwrap_or("model");
                comps.push(Comparator { name: unique_name(&comps, base), rows });
            }
            if let (true, Some(gen)) = (cfg.truth, gen.as_ref().filter(|g| g.kind == DataKind::Toy1d && sub.state_dim == 1)) {
                let rows = metric_sweep(&eval, &training, alphas, |_, a| {
                    let alpha = RiskProbability::new(a)?;
                    let (v, c): (Vec<f64>, Vec<f64>) =
                        sub.x.iter().map(|&x| mixture_var_cvar(&gen.mixture, x, alpha)).collect::<riskmap::Result<Vec<_>>>()?.into_iter().unzip();
                    grid_pair(v, c)
                })?;
                comps.push(Comparator { name: "truth".into(), rows });
            }
        }
    }
    if comps.is_empty() {
        return Err(CliError::usage("nothing to evaluate: pass --checkpoint or enable a comparator"));
    }

    write_config(&cfg.out, &cfg)?;
    for c in &comps {
        let p = cfg.out.join(format!("metrics_{}.csv", c.name));
        let f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        write_metrics_csv(&c.rows, std::io::BufWriter::new(f)).map_err(|e| io_err(&p, e))?;
    }
    let p = cfg.out.join(COMPARISON_FILE);
    fs::write(&p, comparison_csv(&comps)).map_err(|e| io_err(&p, e))?;
    let summary: serde_json::Map<String, serde_json::Value> = comps
        .iter()
        .map(|c| (c.name.clone(), json!({"calibration_error": calibration_error(&c.rows), "pooled": pooled(&c.rows)})))
        .collect();
    let p = cfg.out.join(SUMMARY_FILE);
    fs::write(&p, serde_json::to_string_pretty(&summary).expect("plain data")).map_err(|e| io_err(&p, e))?;
    print_table(&comps);
    Ok(())
}
