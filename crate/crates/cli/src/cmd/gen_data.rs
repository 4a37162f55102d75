use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskmap::dataset::GridDataset;
use riskmap::metrics::default_alphas;
use riskmap::synth::terrain::{terrain_generate, TerrainParams, TerrainSet};
use riskmap::synth::toy1d::{even_grid, toy1d_generate, toy_truth, write_truth_csv};
use riskmap::synth::MixtureSpec;
use riskmap::GridSpec;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{resolve, write_config};
use crate::error::{io_err, CliResult};
use crate::Ctx;

pub const ROWS_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Toy1d,
    Terrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub kind: DataKind,
    pub out: PathBuf,
    pub seed: u64,
    /// Toy rows.
    pub n: usize,
    /// Terrain samples.
    pub samples: usize,
    /// Terrain grid side, in cells.
    pub grid: usize,
    pub resolution: f64,
    /// α values of the written truth tables.
    pub truth_alphas: Vec<f64>,
    /// Evenly spaced x points of the toy truth table.
    pub truth_points: usize,
    pub mixture: MixtureSpec,
    pub terrain: TerrainParams,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: DataKind::Toy1d,
            out: PathBuf::from("data"),
            seed: 0,
            n: 5000,
            samples: 200,
            grid: 64,
            resolution: 0.1,
            truth_alphas: default_alphas(),
            truth_points: 50,
            mixture: MixtureSpec::toy_default(),
            terrain: TerrainParams::default(),
        }
    }
}

impl GenDataConfig {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::centered(self.grid, self.grid, self.resolution)
    }

    /// Rebuilds the terrain worlds (without samples) this config generated.
    pub fn terrain_worlds(&self) -> CliResult<TerrainSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(terrain_generate(&self.terrain, &self.grid_spec(), 0, &mut rng)?)
    }

    /// The generating config saved in a dataset directory, if any.
    pub fn load_from(dir: &Path) -> Option<GenDataConfig> {
        let text = fs::read_to_string(dir.join(crate::config::CONFIG_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg: GenDataConfig = resolve(&GenDataConfig::default(), ctx.file.as_ref(), &ctx.flags, &[])?;
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.kind {
        DataKind::Toy1d => {
            cfg.mixture.validate()?;
            let rows = toy1d_generate(&cfg.mixture, cfg.n, &mut rng)?;
            rows.save(&cfg.out.join(ROWS_FILE))?;
            let xs = even_grid(cfg.mixture.domain, cfg.truth_points);
            let truth = toy_truth(&cfg.mixture, &xs, &cfg.truth_alphas)?;
            write_truth_csv(&truth, create(&cfg.out.join(TRUTH_FILE))?)?;
            println!("wrote {} rows and {} truth rows to {}", rows.len(), truth.len(), cfg.out.display());
        }
        DataKind::Terrain => {
            let set = terrain_generate(&cfg.terrain, &cfg.grid_spec(), cfg.samples, &mut rng)?;
            let worlds: Vec<_> = set.worlds.iter().map(|w| json!({"id": w.id, "roughness": w.roughness})).collect();
            let ds = GridDataset {
                spec: set.spec,
                samples: set.samples.clone(),
                worlds: set.sample_world.iter().map(|&k| Some(k)).collect(),
                extra: json!({"kind": "terrain", "worlds": worlds, "pipeline": cfg.terrain.pipeline}),
            };
            ds.save(&cfg.out)?;
            let dir = cfg.out.join(TRUTH_DIR);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            for t in set.truth(&cfg.truth_alphas)? {
                t.write_csv(create(&dir.join(format!("world_{:02}.csv", t.world)))?)?;
            }
            println!("wrote {} samples from {} worlds to {}", ds.samples.len(), set.worlds.len(), cfg.out.display());
        }
    }
    write_config(&cfg.out, &cfg)
}
