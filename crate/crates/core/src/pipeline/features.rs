//! The ten-channel feature stack.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{GridSpec, RiskGrid};

use super::cloud::PointCloud;
use super::elevation::ElevationMap;
use super::segment::{PointClass, Segmentation};
use super::Pose;

pub const N_CHANNELS: usize = 10;
pub const N_BINS: usize = 5;

pub const CHANNEL_NAMES: [&str; N_CHANNELS] = [
    "elevation",
    "point_count",
    "obstacle_decay",
    "bin0",
    "bin1",
    "bin2",
    "bin3",
    "bin4",
    "robot_distance",
    "known",
];

pub const CH_ELEVATION: usize = 0;
pub const CH_COUNT: usize = 1;
pub const CH_OBSTACLE: usize = 2;
pub const CH_BIN0: usize = 3;
pub const CH_DISTANCE: usize = 8;
pub const CH_KNOWN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// Time constant of the obstacle intensity decay, seconds.
    pub decay_tau: f64,
    pub bin_height: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams { decay_tau: 30.0, bin_height: 0.1 }
    }
}

/// Ten model-input channels over one grid, in [`CHANNEL_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    channels: Vec<RiskGrid>,
}

impl FeatureStack {
    pub fn new(channels: Vec<RiskGrid>) -> Result<Self> {
        if channels.len() != N_CHANNELS {
            return Err(RiskError::invalid(format!("expected {N_CHANNELS} channels, got {}", channels.len())));
        }
        let refs: Vec<&RiskGrid> = channels.iter().collect();
        crate::grid::check_shapes(&refs)?;
        channels[CH_KNOWN].check_binary()?;
        Ok(FeatureStack { channels })
    }

    pub fn channels(&self) -> &[RiskGrid] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [RiskGrid] {
        &mut self.channels
    }

    pub fn channel(&self, i: usize) -> &RiskGrid {
        &self.channels[i]
    }

    pub fn known(&self) -> &RiskGrid {
        &self.channels[CH_KNOWN]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn into_channels(self) -> Vec<RiskGrid> {
        self.channels
    }
}

/// Renders the feature channels from a segmented cloud and its elevation map.
///
/// Unknown cells carry elevation 0 and no bin counts.
pub fn make_features(
    cloud: &PointCloud,
    seg: &Segmentation,
    elev: &ElevationMap,
    pose: Pose,
    spec: &GridSpec,
    params: &FeatureParams,
) -> Result<FeatureStack> {
    if elev.spec != *spec {
        return Err(RiskError::invalid("elevation map built on a different grid"));
    }
    if seg.labels.len() != cloud.len() {
        return Err(RiskError::invalid("segmentation does not match cloud"));
    }
    if !(params.decay_tau > 0.0 && params.bin_height > 0.0) {
        return Err(RiskError::invalid("decay_tau and bin_height must be > 0"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut ch: Vec<RiskGrid> = (0..N_CHANNELS).map(|_| RiskGrid::zeros(w, h)).collect();
    let t_ref = cloud.max_stamp();
    for (p, &class) in cloud.points.iter().zip(&seg.labels) {
        let Some((x, y)) = spec.cell_of(p.x, p.y) else { continue };
        let i = spec.index(x, y);
        ch[CH_COUNT].data_mut()[i] += 1.0;
        if class == PointClass::Obstacle {
            ch[CH_OBSTACLE].data_mut()[i] += (-(t_ref - p.stamp) / params.decay_tau).exp();
        }
        if elev.is_known(x, y) {
            let dz = p.z - elev.elevation.get(x, y);
            if dz >= 0.0 {
                let k = (dz / params.bin_height).floor() as usize;
                if k < N_BINS {
                    ch[CH_BIN0 + k].data_mut()[i] += 1.0;
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let known = elev.is_known(x, y);
            if known {
                ch[CH_ELEVATION].set(x, y, elev.elevation.get(x, y));
                ch[CH_KNOWN].set(x, y, 1.0);
            }
            let (cx, cy) = spec.cell_center(x, y);
            ch[CH_DISTANCE].set(x, y, (cx - pose.x).hypot(cy - pose.y));
        }
    }
    FeatureStack::new(ch)
}
