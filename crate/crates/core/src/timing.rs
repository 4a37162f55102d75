//! Stage timings of the handcrafted and learned costmap pipelines.

use std::fmt::Write as _;
use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{GridSpec, RiskGrid};
use crate::nn::RiskModel;
use crate::pipeline::{
    build_elevation, geometric_cost_label, make_features, segment_ground, HazardRamps, PipelineParams, PointClass, PointCloud, Pose,
};
use crate::synth::terrain::{scan_world, terrain_generate, TerrainParams};

pub const DEFAULT_RUNS: usize = 250;

/// Timed stages, in report order.
pub const STAGES: [&str; 4] = ["ground_segmentation", "elevation_mapping", "geometric_label", "model_inference"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

/// `n` seeded scans cycling through the worlds of `params`.
pub fn bench_clouds(params: &TerrainParams, spec: &GridSpec, n: usize, seed: u64) -> Result<Vec<(PointCloud, Pose)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = terrain_generate(params, spec, 0, &mut rng)?;
    Ok((0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
            scan_world(&set.worlds[i % set.worlds.len()], spec, &params.sensor, &mut r)
        })
        .collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times segmentation, elevation mapping, the geometric label and learned
/// inference (feature rendering plus the forward pass at a uniform α) on
/// every input.
pub fn time_stages(
    inputs: &[(PointCloud, Pose)],
    spec: &GridSpec,
    pipeline: &PipelineParams,
    ramps: &HazardRamps,
    model: &RiskModel,
    alpha: f64,
) -> Result<Vec<StageTiming>> {
    if inputs.is_empty() {
        return Err(RiskError::invalid("no bench inputs"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RiskError::invalid(format!("alpha {alpha} outside [0,1]")));
    }
    let alpha_field = RiskGrid::filled(spec.width, spec.height, alpha);
    let mut samples = vec![Vec::with_capacity(inputs.len()); STAGES.len()];
    for (cloud, pose) in inputs {
        let t = Instant::now();
        let seg = segment_ground(cloud, spec, &pipeline.segment);
        samples[0].push(ms(t));

        let t = Instant::now();
        let ground = seg.points_of(cloud, PointClass::Ground);
        let elev = build_elevation(&ground, spec);
        samples[1].push(ms(t));

        let t = Instant::now();
        black_box(geometric_cost_label(&elev, ramps));
        samples[2].push(ms(t));

        let t = Instant::now();
        let feats = make_features(cloud, &seg, &elev, *pose, spec, &pipeline.features)?;
        black_box(model.predict_costmap(feats.channels(), &alpha_field, feats.known())?);
        samples[3].push(ms(t));
    }
    Ok(STAGES
        .iter()
        .zip(&samples)
        .map(|(name, xs)| {
            let (mean_ms, std_ms) = mean_std(xs);
            StageTiming { stage: name.to_string(), mean_ms, std_ms, runs: xs.len() }
        })
        .collect())
}

pub fn format_table(rows: &[StageTiming]) -> String {
    let mut s = format!("{:<22}{:>12}{:>12}{:>8}\n", "stage", "mean_ms", "std_ms", "runs");
    for r in rows {
        let _ = writeln!(s, "{:<22}{:>12.4}{:>12.4}{:>8}", r.stage, r.mean_ms, r.std_ms, r.runs);
    }
    s
}

pub fn write_csv<W: Write>(rows: &[StageTiming], mut w: W) -> std::io::Result<()> {
    writeln!(w, "stage,mean_ms,std_ms,runs")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6},{}", r.stage, r.mean_ms, r.std_ms, r.runs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeadKind, ModelConfig};

    #[test]
    fn table_has_every_stage() {
        let spec = GridSpec::centered(32, 32, 0.1);
        let params = TerrainParams { worlds: 2, ..TerrainParams::default() };
        let clouds = bench_clouds(&params, &spec, 3, 1).unwrap();
        assert_eq!(clouds, bench_clouds(&params, &spec, 3, 1).unwrap());
        let model = RiskModel::new(ModelConfig::grid_default(HeadKind::Risk), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let rows = time_stages(&clouds, &spec, &params.pipeline, &params.ramps, &model, 0.5).unwrap();
        assert_eq!(rows.iter().map(|r| r.stage.as_str()).collect::<Vec<_>>(), STAGES);
        assert!(rows.iter().all(|r| r.runs == 3 && r.mean_ms > 0.0 && r.std_ms.is_finite()));
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 5);
        let mut csv = Vec::new();
        write_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("stage,mean_ms"));
        assert!(time_stages(&[], &spec, &params.pipeline, &params.ramps, &model, 0.5).is_err());
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
