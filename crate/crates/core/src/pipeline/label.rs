//! Geometric hazard cost from an elevation map.

use serde::{Deserialize, Serialize};

use crate::grid::RiskGrid;

use super::elevation::ElevationMap;

/// Saturating ramps mapping each hazard to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HazardRamps {
    /// Gradient magnitude (rise over run).
    pub slope: (f64, f64),
    /// Largest height difference to a neighbour, meters.
    pub step: (f64, f64),
    /// Height standard deviation over a 3x3 window, meters.
    pub roughness: (f64, f64),
}

impl Default for HazardRamps {
    fn default() -> Self {
        HazardRamps { slope: (0.2, 0.6), step: (0.1, 0.3), roughness: (0.02, 0.10) }
    }
}

pub fn ramp(v: f64, (v0, v1): (f64, f64)) -> f64 {
    ((v - v0) / (v1 - v0)).clamp(0.0, 1.0)
}

impl HazardRamps {
    /// `1 − Π(1 − rᵢ)` over the three ramped hazards.
    pub fn cost(&self, slope: f64, step: f64, roughness: f64) -> f64 {
        let safe = (1.0 - ramp(slope, self.slope)) * (1.0 - ramp(step, self.step)) * (1.0 - ramp(roughness, self.roughness));
        1.0 - safe
    }
}

/// Per-cell `(slope, step, roughness)` on known cells; NaN elsewhere.
pub fn hazards(elev: &ElevationMap) -> (RiskGrid, RiskGrid, RiskGrid) {
    let (w, h) = elev.elevation.shape();
    let res = elev.spec.resolution;
    let z = |x: isize, y: isize| -> Option<f64> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        elev.is_known(x, y).then(|| elev.elevation.get(x, y))
    };
    let derivative = |x: isize, y: isize, dx: isize, dy: isize| -> f64 {
        let c = z(x, y).expect("known centre");
        match (z(x - dx, y - dy), z(x + dx, y + dy)) {
            (Some(a), Some(b)) => (b - a) / (2.0 * res),
            (None, Some(b)) => (b - c) / res,
            (Some(a), None) => (c - a) / res,
            (None, None) => 0.0,
        }
    };
    let mut slope = RiskGrid::filled(w, h, f64::NAN);
    let mut step = RiskGrid::filled(w, h, f64::NAN);
    let mut rough = RiskGrid::filled(w, h, f64::NAN);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let Some(c) = z(x, y) else { continue };
            let gx = derivative(x, y, 1, 0);
            let gy = derivative(x, y, 0, 1);
            let mut max_step: f64 = 0.0;
            let mut window = Vec::with_capacity(9);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(v) = z(x + dx, y + dy) {
                        max_step = max_step.max((v - c).abs());
                        window.push(v);
                    }
                }
            }
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window.len() as f64;
            let (ux, uy) = (x as usize, y as usize);
            slope.set(ux, uy, gx.hypot(gy));
            step.set(ux, uy, max_step);
            rough.set(ux, uy, var.sqrt());
        }
    }
    (slope, step, rough)
}

/// Hazard cost in `[0, 1]` on known cells and 0 on unknown cells.
pub fn geometric_cost_label(elev: &ElevationMap, ramps: &HazardRamps) -> RiskGrid {
    let (s, t, g) = hazards(elev);
    let (w, h) = s.shape();
    RiskGrid::from_fn(w, h, |x, y| {
        if elev.is_known(x, y) {
            ramps.cost(s.get(x, y), t.get(x, y), g.get(x, y))
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ElevationMap {
        ElevationMap::from_elevation(GridSpec::centered(w, h, 0.1), RiskGrid::from_fn(w, h, f))
    }

    #[test]
    fn flat_is_free() {
        let c = geometric_cost_label(&map(6, 6, |_, _| 3.0), &HazardRamps::default());
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tall_step_is_lethal() {
        let c = geometric_cost_label(&map(8, 4, |x, _| if x < 4 { 0.0 } else { 0.5 }), &HazardRamps::default());
        for y in 0..4 {
            assert_eq!(c.get(3, y), 1.0);
            assert_eq!(c.get(4, y), 1.0);
            assert_eq!(c.get(0, y), 0.0);
        }
    }

    #[test]
    fn ramp_arithmetic() {
        let r = HazardRamps::default();
        assert!((r.cost(0.0, 0.2, 0.0) - 0.5).abs() < 1e-12);
        assert_eq!(r.cost(0.0, 0.0, 0.0), 0.0);
        assert_eq!(r.cost(10.0, 0.0, 0.0), 1.0);
        // monotone in each hazard
        let mut prev = 0.0;
        for k in 0..50 {
            let v = r.cost(0.3, k as f64 * 0.01, 0.03);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn unknown_cells_are_zero_and_edges_one_sided() {
        let mut m = map(5, 5, |x, _| 0.1 * x as f64);
        m.known.set(2, 2, 0.0);
        let (s, _, _) = hazards(&m);
        assert!(s.get(2, 2).is_nan());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((s.get(1, 2) - 1.0).abs() < 1e-12);
        let c = geometric_cost_label(&m, &HazardRamps::default());
        assert!(c.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(c.get(2, 2), 0.0);
    }
}
