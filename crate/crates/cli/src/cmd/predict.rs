use std::fs;
use std::path::{Path, PathBuf};

use riskmap::dataset::{is_grid_dataset, GridDataset};
use riskmap::nn::alpha::radial_alpha_field;
use riskmap::nn::checkpoint::load_checkpoint;
use riskmap::nn::RiskModel;
use riskmap::pipeline::{process_cloud, FeatureStack, PipelineParams, PointCloud, Pose};
use riskmap::{GridSpec, RiskGrid, RiskProbability};
use serde::{Deserialize, Serialize};

use crate::config::{resolve, write_config};
use crate::error::{io_err, CliError, CliResult};
use crate::export::{write_grid, Formats};
use crate::Ctx;

/// α level of the exported CVaR − VaR spread.
pub const SPREAD_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPattern {
    Uniform,
    /// Also export maps under α = 1 at the robot decaying to 0 at the edge.
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Pgm,
    Both,
}

impl OutputFormat {
    fn formats(self) -> Formats {
        Formats { csv: self != OutputFormat::Pgm, pgm: self != OutputFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    /// Grid dataset directory or pointcloud file (`.csv` or binary).
    pub input: PathBuf,
    /// Sample id or index within a dataset input.
    pub sample: String,
    pub alphas: Vec<f64>,
    pub alpha_pattern: AlphaPattern,
    pub format: OutputFormat,
    pub out: PathBuf,
    /// Robot pose for pointcloud inputs.
    pub pose: Pose,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            checkpoint: PathBuf::from("run/checkpoint"),
            input: PathBuf::from("data"),
            sample: "0".into(),
            alphas: vec![0.1, 0.5, 0.9],
            alpha_pattern: AlphaPattern::Uniform,
            format: OutputFormat::Both,
            out: PathBuf::from("predict"),
            pose: Pose::default(),
            seed: 0,
        }
    }
}

const ALIASES: &[(&str, &str)] = &[("alpha", "alphas")];

struct Input {
    id: String,
    features: FeatureStack,
    spec: GridSpec,
    pose: Pose,
}

fn load_input(cfg: &PredictConfig, extra: &serde_json::Value) -> CliResult<Input> {
    if is_grid_dataset(&cfg.input) {
        let ds = GridDataset::load(&cfg.input)?;
        let idx = ds
            .samples
            .iter()
            .position(|s| s.id == cfg.sample)
            .or_else(|| cfg.sample.parse::<usize>().ok().filter(|&i| i < ds.samples.len()))
            .ok_or_else(|| CliError::usage(format!("no sample {:?} in {}", cfg.sample, cfg.input.display())))?;
        let s = ds.samples.into_iter().nth(idx).expect("index checked");
        return Ok(Input { id: s.id, features: s.features, spec: ds.spec, pose: s.pose });
    }
    let cloud = PointCloud::load(&cfg.input)?;
    let spec: GridSpec = extra
        .get("grid")
        .and_then(|g| serde_json::from_value(g.clone()).ok())
        .ok_or_else(|| CliError::usage("checkpoint records no grid; predict on a dataset sample instead"))?;
    let params: PipelineParams = extra.get("pipeline").and_then(|p| serde_json::from_value(p.clone()).ok()).unwrap_or_default();
    let out = process_cloud(&cloud, cfg.pose, &spec, &params)?;
    let id = cfg.input.file_stem().map_or("cloud".into(), |s| s.to_string_lossy().into_owned());
    Ok(Input { id, features: out.features, spec, pose: cfg.pose })
}

fn costmap(model: &RiskModel, input: &Input, alpha: &RiskGrid) -> CliResult<(RiskGrid, RiskGrid)> {
    let (v, c, _) = model.predict_costmap(input.features.channels(), alpha, input.features.known())?;
    Ok((v, c))
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg: PredictConfig = resolve(&PredictConfig::default(), ctx.file.as_ref(), &ctx.flags, ALIASES)?;
    if cfg.alphas.is_empty() {
        return Err(CliError::usage("--alpha needs at least one value"));
    }
    for &a in &cfg.alphas {
        RiskProbability::new(a)?;
    }
    let (model, manifest) = load_checkpoint(&cfg.checkpoint)?;
    if !model.is_grid() {
        return Err(CliError::usage("predict exports grid costmaps; this checkpoint is a row model"));
    }
    let input = load_input(&cfg, &manifest.extra)?;
    let (w, h) = input.features.shape();
    let fmt = cfg.format.formats();
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    write_config(&cfg.out, &cfg)?;
    let out: &Path = &cfg.out;

    write_grid(out, "mask", input.features.known(), fmt)?;
    for &a in &cfg.alphas {
        let (v, c) = costmap(&model, &input, &RiskGrid::filled(w, h, a))?;
        write_grid(out, &format!("var_a{a:.2}"), &v, fmt)?;
        write_grid(out, &format!("cvar_a{a:.2}"), &c, fmt)?;
    }
    let (v, c) = costmap(&model, &input, &RiskGrid::filled(w, h, SPREAD_ALPHA))?;
    write_grid(out, &format!("cvar_minus_var_a{SPREAD_ALPHA:.2}"), &c.zip_map(&v, |c, v| c - v)?, fmt)?;

    if cfg.alpha_pattern == AlphaPattern::Radial {
        let (ix, iy) = input
            .spec
            .cell_of(input.pose.x, input.pose.y)
            .ok_or_else(|| CliError::usage("robot pose lies outside the grid"))?;
        let field = radial_alpha_field(w, h, (ix as f64 + 0.5, iy as f64 + 0.5))?;
        let (v, c) = costmap(&model, &input, &field)?;
        write_grid(out, "alpha_radial", &field, fmt)?;
        write_grid(out, "var_radial", &v, fmt)?;
        write_grid(out, "cvar_radial", &c, fmt)?;
    }
    println!("exported costmaps of {} for {} alpha values to {}", input.id, cfg.alphas.len(), out.display());
    Ok(())
}
