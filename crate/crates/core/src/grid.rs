//! Metric grids: the scalar field type shared by features, labels and outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// Placement and resolution of a square-celled metric grid.
///
/// Cell `(ix, iy)` covers `[origin.0 + ix*res, origin.0 + (ix+1)*res)` in x and
/// the same in y. Row 0 is the minimum-y row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::centered(400, 400, 0.1)
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RiskError::invalid("grid must have at least one cell"));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(RiskError::invalid(format!("bad resolution {resolution}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(RiskError::invalid("non-finite grid origin"));
        }
        Ok(GridSpec {
            width,
            height,
            resolution,
            origin,
        })
    }

    /// Grid of the given size centred on the metric origin.
    pub fn centered(width: usize, height: usize, resolution: f64) -> Self {
        GridSpec {
            width,
            height,
            resolution,
            origin: (
                -(width as f64) * resolution / 2.0,
                -(height as f64) * resolution / 2.0,
            ),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Metric extent `(x, y)` in meters.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    /// Cell containing a metric point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.resolution).floor();
        let fy = ((y - self.origin.1) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }
}

/// A 2-D scalar field stored row-major (`data[y * width + x]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RiskGrid {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        RiskGrid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(RiskError::invalid(format!(
                "grid data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(RiskGrid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RiskGrid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RiskGrid {
        RiskGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &RiskGrid, f: impl Fn(f64, f64) -> f64) -> Result<RiskGrid> {
        self.check_same_shape(other)?;
        Ok(RiskGrid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &RiskGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(RiskError::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Number of cells whose value is non-zero, treating the grid as a mask.
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Checks that every value is exactly 0 or 1.
    pub fn check_binary(&self) -> Result<()> {
        if self.data.iter().all(|&v| v == 0.0 || v == 1.0) {
            Ok(())
        } else {
            Err(RiskError::invalid("mask must be {0,1}-valued"))
        }
    }
}

/// Checks that all grids share the shape of the first.
pub fn check_shapes(grids: &[&RiskGrid]) -> Result<()> {
    if let Some((first, rest)) = grids.split_first() {
        for g in rest {
            first.check_same_shape(g)?;
        }
    }
    Ok(())
}
