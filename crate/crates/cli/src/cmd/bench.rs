use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskmap::nn::checkpoint::load_checkpoint;
use riskmap::nn::{HeadKind, ModelConfig, RiskModel};
use riskmap::synth::terrain::TerrainParams;
use riskmap::timing::{bench_clouds, format_table, time_stages, write_csv, DEFAULT_RUNS};
use riskmap::GridSpec;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, write_config};
use crate::error::{io_err, CliError, CliResult};
use crate::Ctx;

pub const BENCH_FILE: &str = "bench.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Trained model; an untrained default network is timed when absent.
    pub checkpoint: Option<PathBuf>,
    pub n: usize,
    pub grid: usize,
    pub resolution: f64,
    pub alpha: f64,
    /// Scene generator for the timed pointclouds.
    pub terrain: TerrainParams,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            checkpoint: None,
            n: DEFAULT_RUNS,
            grid: 64,
            resolution: 0.1,
            alpha: 0.5,
            terrain: TerrainParams::default(),
            out: PathBuf::from("bench"),
            seed: 0,
        }
    }
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg: BenchConfig = resolve(&BenchConfig::default(), ctx.file.as_ref(), &ctx.flags, &[])?;
    if cfg.n == 0 {
        return Err(CliError::usage("--n must be >= 1"));
    }
    let (model, trained) = match &cfg.checkpoint {
        Some(p) => (load_checkpoint(p)?.0, true),
        None => (RiskModel::new(ModelConfig::grid_default(HeadKind::Risk), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?, false),
    };
    if !model.is_grid() {
        return Err(CliError::usage("bench needs a grid-model checkpoint"));
    }
    let spec = GridSpec::centered(cfg.grid, cfg.grid, cfg.resolution);
    let clouds = bench_clouds(&cfg.terrain, &spec, cfg.n, cfg.seed)?;
    let rows = time_stages(&clouds, &spec, &cfg.terrain.pipeline, &cfg.terrain.ramps, &model, cfg.alpha)?;

    write_config(&cfg.out, &cfg)?;
    let p = cfg.out.join(BENCH_FILE);
    let f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
    write_csv(&rows, std::io::BufWriter::new(f)).map_err(|e| io_err(&p, e))?;
    println!("{}x{} grid, N={}, model {}", cfg.grid, cfg.grid, cfg.n, if trained { "from checkpoint" } else { "untrained" });
    print!("{}", format_table(&rows));
    Ok(())
}
