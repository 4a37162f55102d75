//! Joint affine augmentation of features, labels and masks.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::RiskGrid;

use super::features::{FeatureStack, CH_BIN0, CH_COUNT, CH_DISTANCE, CH_ELEVATION, CH_KNOWN, CH_OBSTACLE, N_BINS};
use super::LabeledSample;

/// Which random transforms to compose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOps {
    pub rotate: bool,
    pub translate: bool,
    pub scale: bool,
    pub shear: bool,
    pub flip: bool,
}

impl AugmentOps {
    pub fn all() -> Self {
        AugmentOps { rotate: true, translate: true, scale: true, shear: true, flip: true }
    }

    pub fn any(&self) -> bool {
        self.rotate || self.translate || self.scale || self.shear || self.flip
    }

    /// Parses a comma-separated list such as `rotate,flip`, `all` or `none`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut ops = AugmentOps::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "rotate" => ops.rotate = true,
                "translate" => ops.translate = true,
                "scale" => ops.scale = true,
                "shear" => ops.shear = true,
                "flip" => ops.flip = true,
                "all" => ops = AugmentOps::all(),
                "none" => {}
                other => return Err(RiskError::invalid(format!("unknown augmentation {other:?}"))),
            }
        }
        Ok(ops)
    }
}

/// Maps an output cell position `p` (cell units, centre of cell `i` at
/// `i + 0.5`) to its source position `m·(p − c) + c + t`, where `c` is the
/// grid centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 2]; 2],
    pub t: (f64, f64),
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform { m: [[1.0, 0.0], [0.0, 1.0]], t: (0.0, 0.0) }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        AffineTransform { m: [[c, -s], [s, c]], t: (0.0, 0.0) }
    }

    pub fn flip_x() -> Self {
        AffineTransform { m: [[-1.0, 0.0], [0.0, 1.0]], t: (0.0, 0.0) }
    }

    fn linear(m: [[f64; 2]; 2]) -> Self {
        AffineTransform { m, t: (0.0, 0.0) }
    }

    /// `self` applied after `other` on source coordinates.
    pub fn then(&self, other: &AffineTransform) -> Self {
        let a = self.m;
        let b = other.m;
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = (
            a[0][0] * other.t.0 + a[0][1] * other.t.1 + self.t.0,
            a[1][0] * other.t.0 + a[1][1] * other.t.1 + self.t.1,
        );
        AffineTransform { m, t }
    }

    /// Random composition of the enabled operations for a `w × h` grid.
    pub fn sample<R: Rng + ?Sized>(ops: &AugmentOps, w: usize, h: usize, rng: &mut R) -> Self {
        let mut t = AffineTransform::identity();
        if ops.flip && rng.gen_bool(0.5) {
            t = AffineTransform::flip_x().then(&t);
        }
        if ops.scale {
            let s: f64 = rng.gen_range(0.9..=1.1);
            t = AffineTransform::linear([[s, 0.0], [0.0, s]]).then(&t);
        }
        if ops.shear {
            let k: f64 = rng.gen_range(-0.1..=0.1);
            t = AffineTransform::linear([[1.0, k], [0.0, 1.0]]).then(&t);
        }
        if ops.rotate {
            t = AffineTransform::rotation(rng.gen_range(-PI..PI)).then(&t);
        }
        if ops.translate {
            t.t.0 += rng.gen_range(-0.1..=0.1) * w as f64;
            t.t.1 += rng.gen_range(-0.1..=0.1) * h as f64;
        }
        t
    }

    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        (
            self.m[0][0] * px + self.m[0][1] * py + cx + self.t.0,
            self.m[1][0] * px + self.m[1][1] * py + cy + self.t.1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Nearest,
    Bilinear,
    /// Bilinear over source cells whose mask is set.
    MaskedBilinear,
}

fn inside(q: (f64, f64), w: usize, h: usize) -> bool {
    q.0 >= 0.0 && q.1 >= 0.0 && q.0 < w as f64 && q.1 < h as f64
}

/// Resamples `grid` through `t`; cells whose source is off-grid become 0.
pub fn transform_grid(grid: &RiskGrid, t: &AffineTransform, mode: Resample, mask: Option<&RiskGrid>) -> RiskGrid {
    let (w, h) = grid.shape();
    RiskGrid::from_fn(w, h, |x, y| {
        let q = t.source(x, y, w, h);
        if !inside(q, w, h) {
            return 0.0;
        }
        match mode {
            Resample::Nearest => grid.get(q.0.floor() as usize, q.1.floor() as usize),
            Resample::Bilinear | Resample::MaskedBilinear => {
                let (u, v) = (q.0 - 0.5, q.1 - 0.5);
                let (i0, j0) = (u.floor(), v.floor());
                let (fx, fy) = (u - i0, v - j0);
                let mut num = 0.0;
                let mut den = 0.0;
                for (di, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    for (dj, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                        let (i, j) = (i0 + di, j0 + dj);
                        let wt = wx * wy;
                        if wt == 0.0 || i < 0.0 || j < 0.0 || i >= w as f64 || j >= h as f64 {
                            continue;
                        }
                        let (i, j) = (i as usize, j as usize);
                        let m = match (mode, mask) {
                            (Resample::MaskedBilinear, Some(mk)) => mk.get(i, j),
                            _ => 1.0,
                        };
                        num += wt * m * grid.get(i, j);
                        den += wt * m;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
        }
    })
}

/// Applies one transform to every channel, the cost and the mask.
///
/// Count-like and binary channels use nearest resampling; elevation and cost
/// are interpolated over known source cells only.
pub fn augment_with(s: &LabeledSample, t: &AffineTransform) -> Result<LabeledSample> {
    let mask = transform_grid(&s.mask, t, Resample::Nearest, None);
    let zero_unknown = |g: RiskGrid| g.zip_map(&mask, |v, m| if m != 0.0 { v } else { 0.0 });
    let known = &s.features.channels()[CH_KNOWN];
    let channels = s
        .features
        .channels()
        .iter()
        .enumerate()
        .map(|(k, g)| match k {
            CH_ELEVATION => {
                let e = transform_grid(g, t, Resample::MaskedBilinear, Some(known));
                let km = transform_grid(known, t, Resample::Nearest, None);
                e.zip_map(&km, |v, m| if m != 0.0 { v } else { 0.0 })
            }
            CH_OBSTACLE | CH_DISTANCE => Ok(transform_grid(g, t, Resample::Bilinear, None)),
            k if k == CH_COUNT || k == CH_KNOWN || (CH_BIN0..CH_BIN0 + N_BINS).contains(&k) => {
                Ok(transform_grid(g, t, Resample::Nearest, None))
            }
            _ => Ok(transform_grid(g, t, Resample::Bilinear, None)),
        })
        .collect::<Result<Vec<_>>>()?;
    let cost = zero_unknown(transform_grid(&s.cost, t, Resample::MaskedBilinear, Some(&s.mask)))?;
    LabeledSample::new(s.id.clone(), FeatureStack::new(channels)?, cost, mask, s.pose)
}

/// Draws a random transform from `ops` and applies it to the sample.
pub fn augment_sample<R: Rng + ?Sized>(s: &LabeledSample, ops: &AugmentOps, rng: &mut R) -> Result<LabeledSample> {
    let (w, h) = s.shape();
    let t = AffineTransform::sample(ops, w, h, rng);
    augment_with(s, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::features::N_CHANNELS;
    use crate::pipeline::Pose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> LabeledSample {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (12, 10);
        let mask = RiskGrid::from_fn(w, h, |_, _| if r.gen_bool(0.8) { 1.0 } else { 0.0 });
        let mut chans: Vec<RiskGrid> = (0..N_CHANNELS)
            .map(|k| {
                RiskGrid::from_fn(w, h, |x, y| match k {
                    CH_KNOWN => mask.get(x, y),
                    k if k == CH_COUNT || (CH_BIN0..CH_BIN0 + N_BINS).contains(&k) => ((x * 7 + y * 3 + k) % 5) as f64,
                    _ => ((x as f64) * 0.3 + (y as f64) * 0.17 + k as f64).sin(),
                })
            })
            .collect();
        chans[CH_ELEVATION] = chans[CH_ELEVATION].zip_map(&mask, |v, m| v * m).unwrap();
        let cost = RiskGrid::from_fn(w, h, |x, y| ((x + 2 * y) % 7) as f64 / 6.0 * mask.get(x, y));
        LabeledSample::new("s", FeatureStack::new(chans).unwrap(), cost, mask, Pose::default()).unwrap()
    }

    #[test]
    fn identity_is_bitwise() {
        let s = sample(1);
        assert_eq!(augment_with(&s, &AffineTransform::identity()).unwrap(), s);
        let none = augment_sample(&s, &AugmentOps::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(none, s);
    }

    #[test]
    fn half_turn_twice_restores() {
        let s = sample(2);
        let r = AffineTransform::rotation(PI);
        let back = augment_with(&augment_with(&s, &r).unwrap(), &r).unwrap();
        assert_eq!(back.mask, s.mask);
        for (a, b) in back.features.channels().iter().zip(s.features.channels()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        for (x, y) in back.cost.data().iter().zip(s.cost.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn flip_preserves_nearest_histograms() {
        let s = sample(3);
        let f = augment_with(&s, &AffineTransform::flip_x()).unwrap();
        let hist = |smp: &LabeledSample, k: usize| {
            let mut v: Vec<u64> = smp
                .features
                .channel(k)
                .data()
                .iter()
                .zip(smp.mask.data())
                .filter(|(_, &m)| m != 0.0)
                .map(|(v, _)| v.to_bits())
                .collect();
            v.sort_unstable();
            v
        };
        for k in [CH_COUNT, CH_BIN0, CH_BIN0 + 4, CH_KNOWN] {
            assert_eq!(hist(&s, k), hist(&f, k));
        }
        assert_eq!(f.mask.count_true(), s.mask.count_true());
    }

    #[test]
    fn random_transforms_keep_invariants() {
        let s = sample(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = augment_sample(&s, &AugmentOps::all(), &mut rng).unwrap();
            a.mask.check_binary().unwrap();
            assert_eq!(a.features.known(), &a.mask);
            for k in CH_BIN0..CH_BIN0 + N_BINS {
                assert!(a.features.channel(k).data().iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
            }
            for (c, m) in a.cost.data().iter().zip(a.mask.data()) {
                assert!((0.0..=1.0).contains(c));
                if *m == 0.0 {
                    assert_eq!(*c, 0.0);
                }
            }
        }
    }

    #[test]
    fn parse_ops() {
        assert_eq!(AugmentOps::parse("rotate, flip").unwrap(), AugmentOps { rotate: true, flip: true, ..Default::default() });
        assert_eq!(AugmentOps::parse("all").unwrap(), AugmentOps::all());
        assert!(AugmentOps::parse("warp").is_err());
    }
}
