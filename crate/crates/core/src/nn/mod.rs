//! Autodiff tape, layers, models, optimizer and training.

pub mod adam;
pub mod alpha;
pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod init;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use graph::{Activation, Graph, Var};
pub use model::{Architecture, HeadKind, InputNorm, ModelConfig, RiskModel, Routing};
pub use tensor::Tensor;
pub use train::{LossMode, TrainConfig, TrainReport};
