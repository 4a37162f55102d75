//! Risk-aware traversability costmaps: VaR / CVaR losses and metrics, a
//! partial-convolution encoder-decoder trained with automatic
//! differentiation, a pointcloud feature pipeline and synthetic data with
//! exactly known risk.

pub mod dataset;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod timing;

pub use error::{Result, RiskError};
pub use grid::{GridSpec, RiskGrid};
pub use losses::{LossBreakdown, LossWeights, RiskProbability};
