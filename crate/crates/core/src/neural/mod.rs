//! Inference-only neural graph executor: the feature pyramid, the
//! three-level decision network and the weight network.

pub mod graph;
pub mod network;
pub mod ops;
pub mod pipeline;
mod tensor;
pub mod weights;

pub use graph::{Manifest, ParamSpec, FEATURE_CHANNELS};
pub use network::{LevelOutput, Network};
pub use tensor::Tensor;
pub use weights::{Param, WeightStore};
