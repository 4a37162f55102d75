//! Synthetic terrain worlds scanned into point clouds, with noisy cost labels
//! whose per-cell law is known exactly.
//!
//! Each world has a true elevation surface and a geometric cost `g` computed
//! from it. A sample places the robot somewhere in a world, simulates a scan,
//! runs the cloud through the feature pipeline and draws one label per
//! observed cell from `Y = clamp((1 − κ)·g + κ·Z, 0, 1)`, where `Z` is a
//! two-mode Gaussian mixture whose means rise with `g`. `g` is quantized to
//! `1/LEVELS` so one oracle table covers every cell.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{GridSpec, RiskGrid};
use crate::losses::RiskProbability;
use crate::nn::model::gaussian_var_cvar;
use crate::par;
use crate::pipeline::{geometric_cost_label, process_cloud, ElevationMap, HazardRamps, LabeledSample, PipelineParams, Point, PointCloud, Pose};

use super::mixture::{Curve, GaussianMixture, MixtureComponent, MixtureSpec};

/// Quantization levels of the geometric cost.
pub const LEVELS: usize = 1000;

pub fn quantize(g: f64) -> f64 {
    (g.clamp(0.0, 1.0) * LEVELS as f64).round() / LEVELS as f64
}

fn level(g: f64) -> usize {
    (g.clamp(0.0, 1.0) * LEVELS as f64).round() as usize
}

/// One Gaussian mode of `Z`, with mean `offset + slope·g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMode {
    pub weight: f64,
    pub offset: f64,
    pub slope: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelNoise {
    /// Weight κ of the random part; `0` gives `Y = g` exactly.
    pub kappa: f64,
    pub modes: Vec<NoiseMode>,
}

impl Default for LabelNoise {
    fn default() -> Self {
        LabelNoise {
            kappa: 0.8,
            modes: vec![
                NoiseMode { weight: 0.7, offset: 0.1, slope: 0.5, std: 0.04 },
                NoiseMode { weight: 0.3, offset: 0.45, slope: 0.4, std: 0.06 },
            ],
        }
    }
}

impl LabelNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(RiskError::invalid("kappa must lie in [0, 1]"));
        }
        if self.kappa > 0.0 {
            self.spec().expect("kappa > 0").validate()?;
        }
        Ok(())
    }

    /// The unclamped law of `Y` as a function of `g`, or `None` when `κ = 0`.
    pub fn spec(&self) -> Option<MixtureSpec> {
        if self.kappa == 0.0 {
            return None;
        }
        let k = self.kappa;
        Some(MixtureSpec {
            components: self
                .modes
                .iter()
                .map(|m| MixtureComponent {
                    weight: m.weight,
                    mean: Curve { offset: k * m.offset, slope: 1.0 - k + k * m.slope, ..Default::default() },
                    std: Curve::constant(k * m.std),
                })
                .collect(),
            domain: (0.0, 1.0),
        })
    }

    pub fn law(&self, g: f64) -> Option<GaussianMixture> {
        self.spec().map(|s| s.at(g))
    }

    pub fn sample<R: Rng + ?Sized>(&self, g: f64, rng: &mut R) -> f64 {
        match self.law(g) {
            Some(law) => law.sample(rng).clamp(0.0, 1.0),
            None => g,
        }
    }

    /// Exact VaR / CVaR of the clamped label at cost `g`.
    pub fn var_cvar(&self, g: f64, alpha: RiskProbability) -> Result<(f64, f64)> {
        match self.law(g) {
            Some(law) => law.clamped_var_cvar(alpha.value(), 0.0, 1.0),
            None => Ok((g, g)),
        }
    }
}

/// VaR / CVaR per quantized cost level and α.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub alphas: Vec<f64>,
    var: Vec<f64>,
    cvar: Vec<f64>,
}

impl OracleTable {
    pub fn build(noise: &LabelNoise, alphas: &[f64]) -> Result<Self> {
        let probs = alphas.iter().map(|&a| RiskProbability::new(a)).collect::<Result<Vec<_>>>()?;
        let rows = par::map_range(LEVELS + 1, |q| {
            probs.iter().map(|&a| noise.var_cvar(q as f64 / LEVELS as f64, a)).collect::<Result<Vec<_>>>()
        });
        let mut var = Vec::with_capacity((LEVELS + 1) * alphas.len());
        let mut cvar = Vec::with_capacity(var.capacity());
        for row in rows {
            for (v, c) in row? {
                var.push(v);
                cvar.push(c);
            }
        }
        Ok(OracleTable { alphas: alphas.to_vec(), var, cvar })
    }

    pub fn lookup(&self, g: f64, alpha_index: usize) -> (f64, f64) {
        let i = level(g) * self.alphas.len() + alpha_index;
        (self.var[i], self.cvar[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    /// Maximum horizontal range, meters.
    pub range: f64,
    /// Expected returns per cell next to the robot.
    pub points_per_cell: f64,
    pub z_noise: f64,
    pub occluders: usize,
    pub ceiling_points: usize,
    /// Stamps are uniform over `[0, scan_duration]` seconds.
    pub scan_duration: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams { range: 3.0, points_per_cell: 4.0, z_noise: 0.01, occluders: 3, ceiling_points: 20, scan_duration: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainParams {
    pub worlds: usize,
    /// World `k` gets roughness amplitude interpolated linearly over this range.
    pub roughness: (f64, f64),
    pub hill_amplitude: f64,
    pub rocks: usize,
    pub steps: usize,
    pub poles: usize,
    pub sensor: SensorParams,
    pub noise: LabelNoise,
    pub ramps: HazardRamps,
    pub pipeline: PipelineParams,
}

impl Default for TerrainParams {
    fn default() -> Self {
        TerrainParams {
            worlds: 8,
            roughness: (0.005, 0.04),
            hill_amplitude: 0.15,
            rocks: 8,
            steps: 2,
            poles: 4,
            sensor: SensorParams::default(),
            noise: LabelNoise::default(),
            ramps: HazardRamps::default(),
            pipeline: PipelineParams::default(),
        }
    }
}

impl TerrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.worlds == 0 {
            return Err(RiskError::invalid("need at least one world"));
        }
        let (lo, hi) = self.roughness;
        if !(lo >= 0.0 && hi >= lo) || !(self.hill_amplitude >= 0.0) {
            return Err(RiskError::invalid("terrain amplitudes must be non-negative"));
        }
        let s = &self.sensor;
        if !(s.range > 0.0 && s.points_per_cell > 0.0 && s.z_noise >= 0.0 && s.scan_duration >= 0.0) {
            return Err(RiskError::invalid("invalid sensor parameters"));
        }
        self.noise.validate()
    }

    fn world_roughness(&self, k: usize) -> f64 {
        let (lo, hi) = self.roughness;
        if self.worlds == 1 {
            return lo;
        }
        lo + (hi - lo) * k as f64 / (self.worlds - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub id: usize,
    pub roughness: f64,
    pub elevation: RiskGrid,
    /// Quantized geometric cost of the true surface, `1` on poles.
    pub geometric: RiskGrid,
    pub poles: Vec<(usize, usize)>,
}

struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

fn waves<R: Rng>(n: usize, amp: f64, wavelength: (f64, f64), rng: &mut R) -> Vec<Wave> {
    (0..n)
        .map(|_| {
            let lambda = rng.gen_range(wavelength.0..wavelength.1);
            let dir = rng.gen_range(0.0..2.0 * PI);
            let k = 2.0 * PI / lambda;
            Wave { amp: amp * rng.gen_range(0.5..1.5), kx: k * dir.cos(), ky: k * dir.sin(), phase: rng.gen_range(0.0..2.0 * PI) }
        })
        .collect()
}

fn build_world<R: Rng>(id: usize, params: &TerrainParams, spec: &GridSpec, rng: &mut R) -> World {
    let roughness = params.world_roughness(id);
    let hills = waves(4, params.hill_amplitude / 2.0, (3.0, 8.0), rng);
    let ripples = waves(16, roughness / 2.0, (0.4, 1.5), rng);
    let (ew, eh) = spec.extent();
    let (ox, oy) = spec.origin;
    let point = |rng: &mut R| (ox + rng.gen_range(0.0..ew), oy + rng.gen_range(0.0..eh));
    // terraces: half-planes raised by a modest step
    let steps: Vec<((f64, f64), (f64, f64), f64)> = (0..params.steps)
        .map(|_| {
            let a = rng.gen_range(0.0..2.0 * PI);
            (point(rng), (a.cos(), a.sin()), rng.gen_range(0.05..0.15))
        })
        .collect();
    let rocks: Vec<((f64, f64), f64, f64)> = (0..params.rocks)
        .map(|_| (point(rng), rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.25)))
        .collect();
    let elevation = RiskGrid::from_fn(spec.width, spec.height, |ix, iy| {
        let (x, y) = spec.cell_center(ix, iy);
        let mut z = 0.0;
        for w in hills.iter().chain(&ripples) {
            z += w.amp * (w.kx * x + w.ky * y + w.phase).sin();
        }
        for &((px, py), (nx, ny), h) in &steps {
            if (x - px) * nx + (y - py) * ny > 0.0 {
                z += h;
            }
        }
        for &((px, py), h, s) in &rocks {
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            z += h * (-d2 / (2.0 * s * s)).exp();
        }
        z
    });
    let poles: Vec<(usize, usize)> =
        (0..params.poles).map(|_| (rng.gen_range(0..spec.width), rng.gen_range(0..spec.height))).collect();
    let mut geometric = geometric_cost_label(&ElevationMap::from_elevation(*spec, elevation.clone()), &params.ramps);
    for &(x, y) in &poles {
        geometric.set(x, y, 1.0);
    }
    let geometric = geometric.map(quantize);
    World { id, roughness, elevation, geometric, poles }
}

/// Simulated scan of `world` from a random pose.
pub fn scan_world<R: Rng>(world: &World, spec: &GridSpec, sensor: &SensorParams, rng: &mut R) -> (PointCloud, Pose) {
    let (ew, eh) = spec.extent();
    let (ox, oy) = spec.origin;
    let pose = Pose {
        x: ox + ew * rng.gen_range(0.25..0.75),
        y: oy + eh * rng.gen_range(0.25..0.75),
        yaw: rng.gen_range(-PI..PI),
    };
    let occluders: Vec<(f64, f64, f64)> = (0..sensor.occluders)
        .map(|_| {
            let r = sensor.range * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..2.0 * PI);
            (pose.x + r * a.cos(), pose.y + r * a.sin(), rng.gen_range(0.2..0.6))
        })
        .collect();
    let noise = Normal::new(0.0, sensor.z_noise.max(1e-12)).expect("valid std");
    let half = spec.resolution / 2.0;
    let mut pts = Vec::new();
    let mut visible = Vec::new();
    let emit = |pts: &mut Vec<Point>, rng: &mut R, cx: f64, cy: f64, z: f64| {
        pts.push(Point {
            x: cx + rng.gen_range(-half..half),
            y: cy + rng.gen_range(-half..half),
            z,
            intensity: rng.gen(),
            stamp: rng.gen_range(0.0..=sensor.scan_duration),
        });
    };
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            let (cx, cy) = spec.cell_center(ix, iy);
            let d = ((cx - pose.x).powi(2) + (cy - pose.y).powi(2)).sqrt();
            if d > sensor.range || occluders.iter().any(|&(x, y, r)| (cx - x).powi(2) + (cy - y).powi(2) < r * r) {
                continue;
            }
            let lambda = sensor.points_per_cell * (0.3 + 0.7 * (-2.0 * d / sensor.range).exp());
            let n = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
            let e = world.elevation.get(ix, iy);
            for _ in 0..n {
                let z = e + noise.sample(rng);
                emit(&mut pts, rng, cx, cy, z);
            }
            if n > 0 {
                visible.push((ix, iy));
            }
        }
    }
    for &(ix, iy) in &world.poles {
        if visible.contains(&(ix, iy)) {
            let (cx, cy) = spec.cell_center(ix, iy);
            let e = world.elevation.get(ix, iy);
            for _ in 0..12 {
                let z = e + rng.gen_range(0.2..1.5);
                emit(&mut pts, rng, cx, cy, z);
            }
        }
    }
    if !visible.is_empty() {
        for _ in 0..sensor.ceiling_points {
            let (ix, iy) = visible[rng.gen_range(0..visible.len())];
            let (cx, cy) = spec.cell_center(ix, iy);
            let z = world.elevation.get(ix, iy) + rng.gen_range(2.3..3.0);
            emit(&mut pts, rng, cx, cy, z);
        }
    }
    (PointCloud { points: pts }, pose)
}

/// VaR / CVaR grids of one world over an α list.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub world: usize,
    pub alphas: Vec<f64>,
    pub var: Vec<RiskGrid>,
    pub cvar: Vec<RiskGrid>,
}

impl TruthTable {
    /// CSV `cell_x,cell_y,alpha,var,cvar`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let fmt = |e: csv::Error| RiskError::Format(e.to_string());
        wtr.write_record(["cell_x", "cell_y", "alpha", "var", "cvar"]).map_err(fmt)?;
        for (k, &a) in self.alphas.iter().enumerate() {
            let (v, c) = (&self.var[k], &self.cvar[k]);
            for y in 0..v.height() {
                for x in 0..v.width() {
                    wtr.write_record([x.to_string(), y.to_string(), a.to_string(), v.get(x, y).to_string(), c.get(x, y).to_string()])
                        .map_err(fmt)?;
                }
            }
        }
        wtr.flush().map_err(|e| RiskError::Format(e.to_string()))
    }
}

/// Generated worlds and the samples scanned from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSet {
    pub spec: GridSpec,
    pub params: TerrainParams,
    pub worlds: Vec<World>,
    pub samples: Vec<LabeledSample>,
    /// World index of each sample.
    pub sample_world: Vec<usize>,
}

/// Builds `params.worlds` worlds and scans `n_samples` samples, cycling
/// through the worlds.
pub fn terrain_generate<R: Rng + ?Sized>(params: &TerrainParams, spec: &GridSpec, n_samples: usize, rng: &mut R) -> Result<TerrainSet> {
    params.validate()?;
    let worlds: Vec<World> = (0..params.worlds)
        .map(|k| build_world(k, params, spec, &mut ChaCha8Rng::seed_from_u64(rng.gen())))
        .collect();
    let seeds: Vec<u64> = (0..n_samples).map(|_| rng.gen()).collect();
    let sample_world: Vec<usize> = (0..n_samples).map(|i| i % params.worlds).collect();
    let samples = par::map_range(n_samples, |i| {
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        let world = &worlds[sample_world[i]];
        let (cloud, pose) = scan_world(world, spec, &params.sensor, &mut r);
        let out = process_cloud(&cloud, pose, spec, &params.pipeline)?;
        let mask = out.features.known().clone();
        let mut cost = RiskGrid::zeros(spec.width, spec.height);
        for y in 0..spec.height {
            for x in 0..spec.width {
                if mask.get(x, y) != 0.0 {
                    cost.set(x, y, params.noise.sample(world.geometric.get(x, y), &mut r));
                }
            }
        }
        LabeledSample::new(format!("w{:02}-s{:05}", world.id, i), out.features, cost, mask, pose)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TerrainSet { spec: *spec, params: params.clone(), worlds, samples, sample_world })
}

impl TerrainSet {
    /// Exact per-world VaR / CVaR grids.
    pub fn truth(&self, alphas: &[f64]) -> Result<Vec<TruthTable>> {
        let table = OracleTable::build(&self.params.noise, alphas)?;
        Ok(self.worlds.iter().map(|w| world_truth(w, &table)).collect())
    }

    /// Indices of samples whose world satisfies `pred`.
    pub fn samples_where(&self, pred: impl Fn(&World) -> bool) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| pred(&self.worlds[self.sample_world[i]])).collect()
    }
}

pub fn world_truth(world: &World, table: &OracleTable) -> TruthTable {
    let g = &world.geometric;
    let (mut var, mut cvar) = (Vec::new(), Vec::new());
    for k in 0..table.alphas.len() {
        var.push(g.map(|gv| table.lookup(gv, k).0));
        cvar.push(g.map(|gv| table.lookup(gv, k).1));
    }
    TruthTable { world: world.id, alphas: table.alphas.clone(), var, cvar }
}

/// Per-cell label mean, std and count over the samples of each world.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMoments {
    pub mean: RiskGrid,
    pub std: RiskGrid,
    pub count: RiskGrid,
}

pub fn label_moments(samples: &[&LabeledSample], worlds: &[usize], n_worlds: usize) -> Result<Vec<LabelMoments>> {
    if samples.len() != worlds.len() {
        return Err(RiskError::invalid("one world index per sample required"));
    }
    let Some(first) = samples.first() else {
        return Err(RiskError::invalid("no samples"));
    };
    let (w, h) = first.shape();
    let mut acc = vec![(vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]); n_worlds];
    for (s, &k) in samples.iter().zip(worlds) {
        if s.shape() != (w, h) || k >= n_worlds {
            return Err(RiskError::invalid("sample shape or world index out of range"));
        }
        let (sum, sq, n) = &mut acc[k];
        for (i, (&c, &m)) in s.cost.data().iter().zip(s.mask.data()).enumerate() {
            if m != 0.0 {
                sum[i] += c;
                sq[i] += c * c;
                n[i] += 1.0;
            }
        }
    }
    acc.into_iter()
        .map(|(sum, sq, n)| {
            let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &c)| if c > 0.0 { s / c } else { f64::NAN }).collect();
            let std: Vec<f64> = sq
                .iter()
                .zip(&n)
                .zip(&mean)
                .map(|((q, &c), m)| if c > 0.0 { (q / c - m * m).max(0.0).sqrt() } else { f64::NAN })
                .collect();
            Ok(LabelMoments { mean: RiskGrid::from_vec(w, h, mean)?, std: RiskGrid::from_vec(w, h, std)?, count: RiskGrid::from_vec(w, h, n)? })
        })
        .collect()
}

impl LabelMoments {
    /// Closed-form Gaussian VaR / CVaR from the moments; unseen cells get
    /// `fallback` for both.
    pub fn gaussian_var_cvar(&self, alpha: f64, fallback: f64) -> Result<(RiskGrid, RiskGrid)> {
        let (w, h) = self.mean.shape();
        let mut v = Vec::with_capacity(w * h);
        let mut c = Vec::with_capacity(w * h);
        for (&m, &s) in self.mean.data().iter().zip(self.std.data()) {
            let (vi, ci) = if m.is_nan() { (fallback, fallback) } else { gaussian_var_cvar(m, s, alpha)? };
            v.push(vi);
            c.push(ci);
        }
        Ok((RiskGrid::from_vec(w, h, v)?, RiskGrid::from_vec(w, h, c)?))
    }
}
