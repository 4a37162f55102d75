//! Pointcloud to feature-grid pipeline and the geometric cost labeler.

pub mod augment;
pub mod cloud;
pub mod elevation;
pub mod features;
pub mod label;
pub mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::grid::{GridSpec, RiskGrid};

pub use augment::{augment_sample, AffineTransform, AugmentOps};
pub use cloud::{Point, PointCloud};
pub use elevation::{build_elevation, ElevationMap};
pub use features::{make_features, FeatureParams, FeatureStack, CHANNEL_NAMES, N_CHANNELS};
pub use label::{geometric_cost_label, HazardRamps};
pub use segment::{segment_ground, PointClass, SegmentParams, Segmentation};

/// Planar robot pose in the grid's metric frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Features with a cost label in `[0, 1]` on its mask-true cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureStack,
    pub cost: RiskGrid,
    pub mask: RiskGrid,
    pub pose: Pose,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, features: FeatureStack, cost: RiskGrid, mask: RiskGrid, pose: Pose) -> Result<Self> {
        let shape = features.shape();
        if cost.shape() != shape || mask.shape() != shape {
            return Err(RiskError::invalid("label grids differ in shape from features"));
        }
        mask.check_binary()?;
        for (&c, &m) in cost.data().iter().zip(mask.data()) {
            if m != 0.0 && !(0.0..=1.0).contains(&c) {
                return Err(RiskError::invalid(format!("cost {c} outside [0,1] on a known cell")));
            }
        }
        Ok(LabeledSample { id: id.into(), features, cost, mask, pose })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cost.shape()
    }
}

/// Parameters of the full cloud-to-features pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub segment: SegmentParams,
    pub features: FeatureParams,
}

/// Intermediate and final products of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub segmentation: Segmentation,
    pub elevation: ElevationMap,
    pub features: FeatureStack,
}

/// Segments, maps and featurizes a cloud.
pub fn process_cloud(cloud: &PointCloud, pose: Pose, spec: &GridSpec, params: &PipelineParams) -> Result<PipelineOutput> {
    let segmentation = segment_ground(cloud, spec, &params.segment);
    let ground = segmentation.points_of(cloud, PointClass::Ground);
    let elevation = build_elevation(&ground, spec);
    let features = make_features(cloud, &segmentation, &elevation, pose, spec, &params.features)?;
    Ok(PipelineOutput { segmentation, elevation, features })
}
