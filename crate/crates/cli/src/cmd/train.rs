use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskmap::dataset::{is_grid_dataset, GridDataset, RowSet};
use riskmap::nn::checkpoint::save_checkpoint;
use riskmap::nn::train::{train, TrainData};
use riskmap::nn::{Activation, Architecture, LossMode, ModelConfig, RiskModel, TrainConfig};
use riskmap::pipeline::{AugmentOps, N_CHANNELS};
use riskmap::LossWeights;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cmd::gen_data::ROWS_FILE;
use crate::config::{peek, resolve, write_config};
use crate::error::{io_err, CliError, CliResult};
use crate::Ctx;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";

/// Network size knobs; the head follows the loss mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub depth: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { hidden: 64, hidden_layers: 2, width: 8, depth: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub model: ModelShape,
}

const ALIASES: &[(&str, &str)] = &[
    ("epochs", "train.epochs"),
    ("lr", "train.learning_rate"),
    ("learning_rate", "train.learning_rate"),
    ("batch_size", "train.batch_size"),
    ("loss_mode", "train.loss_mode"),
    ("patience", "train.patience"),
    ("lr_decay", "train.lr_decay"),
    ("split", "train.split"),
    ("fd_scheme", "train.fd_scheme"),
    ("fd_delta", "train.fd_delta"),
    ("hidden", "model.hidden"),
    ("hidden_layers", "model.hidden_layers"),
    ("width", "model.width"),
    ("depth", "model.depth"),
];

/// Loaded training data.
pub enum Data {
    Rows(RowSet),
    Grid(GridDataset),
}

impl Data {
    pub fn load(path: &Path) -> CliResult<Data> {
        if is_grid_dataset(path) {
            return Ok(Data::Grid(GridDataset::load(path)?));
        }
        let csv = if path.is_dir() { path.join(ROWS_FILE) } else { path.to_path_buf() };
        if !csv.is_file() {
            return Err(io_err(&csv, std::io::ErrorKind::NotFound.into()));
        }
        Ok(Data::Rows(RowSet::load(&csv)?))
    }

    /// Directory holding the data, where its generating config lives.
    pub fn dir(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::Rows(r) => r.len(),
            Data::Grid(g) => g.samples.len(),
        }
    }
}

fn defaults(grid: bool) -> TrainRunConfig {
    let train = if grid {
        TrainConfig { learning_rate: 2e-3, batch_size: 4, epochs: 30, lr_decay: 0.97, ..TrainConfig::default() }
    } else {
        TrainConfig { learning_rate: 3e-3, batch_size: 128, epochs: 100, lr_decay: 0.97, patience: 20, ..TrainConfig::default() }
    };
    TrainRunConfig {
        data: PathBuf::from("data"),
        out: PathBuf::from("run"),
        seed: 0,
        train,
        weights: LossWeights::default(),
        model: ModelShape::default(),
    }
}

fn model_config(shape: &ModelShape, mode: LossMode, data: &Data) -> ModelConfig {
    let arch = match data {
        Data::Rows(r) => Architecture::Mlp {
            state_dim: r.state_dim,
            hidden: shape.hidden,
            hidden_layers: shape.hidden_layers,
            activation: Activation::Tanh,
        },
        Data::Grid(_) => Architecture::EncDec {
            in_channels: N_CHANNELS,
            width: shape.width,
            depth: shape.depth,
            activation: Activation::Elu,
        },
    };
    ModelConfig { arch, head: mode.head(), input_norm: None }
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let mut flags = ctx.flags.clone();
    // augmentation takes a list like `rotate,flip` rather than a JSON object
    let augment = flags.take("augment").map(|s| AugmentOps::parse(&s)).transpose()?;
    let data_path = peek(ctx.file.as_ref(), &flags, "data").ok_or_else(|| CliError::usage("--data is required"))?;
    let data = Data::load(Path::new(&data_path))?;
    let mut cfg: TrainRunConfig = resolve(&defaults(matches!(data, Data::Grid(_))), ctx.file.as_ref(), &flags, ALIASES)?;
    if let Some(a) = augment {
        cfg.train.augmentation = a;
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;
    cfg.weights.validate()?;

    let mut model = RiskModel::new(model_config(&cfg.model, cfg.train.loss_mode, &data), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let report = match &data {
        Data::Rows(r) => train(&mut model, TrainData::Rows(r), &cfg.train, &cfg.weights)?,
        Data::Grid(g) => train(&mut model, TrainData::Grid(&g.samples), &cfg.train, &cfg.weights)?,
    };

    write_config(&cfg.out, &cfg)?;
    let mut extra = json!({
        "loss_mode": cfg.train.loss_mode,
        "split": cfg.train.split,
        "seed": cfg.seed,
        "samples": data.len(),
        "best_epoch": report.best_epoch,
    });
    if let Data::Grid(g) = &data {
        extra["grid"] = json!(g.spec);
        if let Some(p) = g.extra.get("pipeline") {
            extra["pipeline"] = p.clone();
        }
    }
    save_checkpoint(&model, &cfg.out.join(CHECKPOINT_DIR), extra)?;
    let p = cfg.out.join(HISTORY_FILE);
    fs::write(&p, report.to_csv()).map_err(|e| io_err(&p, e))?;
    let p = cfg.out.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(&p, text).map_err(|e| io_err(&p, e))?;

    let first = report.history.first().and_then(|r| r.val.map(|v| v.total));
    let best = report.history.get(report.best_epoch).and_then(|r| r.val.map(|v| v.total));
    println!(
        "trained {} epochs (best {}, early stop {}), val loss {} -> {}; checkpoint in {}",
        report.history.len(),
        report.best_epoch,
        report.stopped_early,
        first.map_or("n/a".into(), |v| format!("{v:.6}")),
        best.map_or("n/a".into(), |v| format!("{v:.6}")),
        cfg.out.join(CHECKPOINT_DIR).display()
    );
    Ok(())
}
