//! Cost-volume-free multi-view stereo: per-pixel inverse depth is found by
//! repeated binary front/behind decisions against each source view, fused
//! across sources with confidence weights.
//!
//! The usual entry point is [`engine::run`] with a [`SceneBundle`], an
//! [`InverseDepthInterval`], a [`DecisionOracle`] and a [`WeightOracle`].

pub mod cloud;
pub mod decision;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod scenegen;

pub use cloud::{FusionParams, Point, PointCloud};
pub use decision::{Decision, DecisionOracle, SoftMask};
pub use engine::{EngineConfig, EngineOutput, HypothesisMap, Trace};
pub use error::{Error, Result};
pub use fusion::{WeightMap, WeightOracle};
pub use geometry::{Camera, InverseDepthInterval, PixelCoord};
pub use grid::{Grid, Image};
pub use metrics::{CloudMetrics, MetricMode};
pub use scene::{SceneBundle, View};
pub use scenegen::SceneSpec;
