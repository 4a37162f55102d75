//! 2.5-D elevation map from ground points.

use crate::grid::{GridSpec, RiskGrid};

use super::cloud::Point;

/// Per-cell ground statistics. `elevation` and `variance` are NaN on unknown
/// cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationMap {
    pub spec: GridSpec,
    pub elevation: RiskGrid,
    /// Population variance of the cell's ground heights.
    pub variance: RiskGrid,
    pub point_count: RiskGrid,
    pub known: RiskGrid,
}

impl ElevationMap {
    pub fn is_known(&self, x: usize, y: usize) -> bool {
        self.known.get(x, y) != 0.0
    }

    /// Builds a fully known map from exact cell elevations.
    pub fn from_elevation(spec: GridSpec, elevation: RiskGrid) -> Self {
        let known = elevation.map(|z| if z.is_nan() { 0.0 } else { 1.0 });
        ElevationMap {
            spec,
            variance: elevation.map(|z| if z.is_nan() { f64::NAN } else { 0.0 }),
            point_count: known.clone(),
            known,
            elevation,
        }
    }
}

pub fn build_elevation(ground: &[Point], spec: &GridSpec) -> ElevationMap {
    let n = spec.len();
    let mut count = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for p in ground {
        if let Some((x, y)) = spec.cell_of(p.x, p.y) {
            let i = spec.index(x, y);
            count[i] += 1.0;
            sum[i] += p.z;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(&s, &c)| if c > 0.0 { s / c } else { f64::NAN }).collect();
    let mut sq = vec![0.0; n];
    for p in ground {
        if let Some((x, y)) = spec.cell_of(p.x, p.y) {
            let i = spec.index(x, y);
            sq[i] += (p.z - mean[i]).powi(2);
        }
    }
    let var: Vec<f64> = sq.iter().zip(&count).map(|(&s, &c)| if c > 0.0 { s / c } else { f64::NAN }).collect();
    let (w, h) = (spec.width, spec.height);
    let grid = |v: Vec<f64>| RiskGrid::from_vec(w, h, v).expect("grid sized");
    ElevationMap {
        spec: *spec,
        known: grid(count.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect()),
        elevation: grid(mean),
        variance: grid(var),
        point_count: grid(count),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_statistics() {
        let spec = GridSpec::centered(2, 1, 1.0);
        let pts = [Point::new(-0.5, 0.0, 1.0), Point::new(-0.4, 0.1, 2.0)];
        let m = build_elevation(&pts, &spec);
        assert_eq!(m.elevation.get(0, 0), 1.5);
        assert_eq!(m.variance.get(0, 0), 0.25);
        assert_eq!(m.point_count.get(0, 0), 2.0);
        assert!(m.is_known(0, 0));
        assert!(!m.is_known(1, 0));
        assert!(m.elevation.get(1, 0).is_nan());

        let single = build_elevation(&[Point::new(0.5, 0.0, 1.5)], &spec);
        assert_eq!((single.elevation.get(1, 0), single.variance.get(1, 0)), (1.5, 0.0));
    }
}
