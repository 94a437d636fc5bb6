//! Per-pixel binary decisions: does the surface lie in front of the current
//! hypothesis (`1`) or behind it (`0`)?

mod ground_truth;
mod neural;
mod zncc;

pub use ground_truth::{ground_truth_mask, GroundTruthOracle};
pub use neural::NeuralOracle;
pub use zncc::{ZnccConfig, ZnccOracle};

use crate::engine::HypothesisMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene::SceneBundle;

/// Soft decision values in `[0, 1]` with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    values: Grid<f64>,
    valid: Grid<bool>,
}

impl SoftMask {
    pub fn new(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        valid.ensure_dims(values.width(), values.height(), "mask validity")?;
        for (v, ok) in values.data().iter().zip(valid.data()) {
            if *ok && !(0.0..=1.0).contains(v) {
                return Err(Error::Invariant(format!("mask value {v} outside [0, 1]")));
            }
        }
        Ok(Self { values, valid })
    }

    /// Every pixel valid.
    pub fn dense(values: Grid<f64>) -> Result<Self> {
        let valid = Grid::filled(values.width(), values.height(), true);
        Self::new(values, valid)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Decision to act on at pixel index `i`: the mask value where valid,
    /// the no-information value `0.5` otherwise.
    #[inline]
    pub fn decision(&self, i: usize) -> f64 {
        if self.valid.data()[i] {
            self.values.data()[i]
        } else {
            0.5
        }
    }
}

/// Oracle output: the full-resolution mask plus any coarser masks the oracle
/// produced on the way (coarsest first; empty for single-scale oracles).
#[derive(Debug, Clone)]
pub struct Decision {
    pub mask: SoftMask,
    pub levels: Vec<Grid<f64>>,
}

impl From<SoftMask> for Decision {
    fn from(mask: SoftMask) -> Self {
        Decision {
            mask,
            levels: Vec::new(),
        }
    }
}

/// What an oracle sees for one source view at one iteration.
#[derive(Debug, Clone, Copy)]
pub struct DecisionRequest<'a> {
    pub scene: &'a SceneBundle,
    pub source: usize,
    pub hypothesis: &'a HypothesisMap,
}

/// Produces soft binary decisions for a reference/source pair.
///
/// Implementations are deterministic and safe to call concurrently for
/// different sources.
pub trait DecisionOracle: Send + Sync {
    fn name(&self) -> &'static str;

    /// One-off per-scene work (e.g. feature extraction) before the first iteration.
    fn prepare(&mut self, _scene: &SceneBundle) -> Result<()> {
        Ok(())
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision>;
}

/// Returns the same value at every pixel; `0.5` leaves the hypothesis
/// untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOracle(pub f64);

impl DecisionOracle for ConstantOracle {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn decide(&self, r: &DecisionRequest<'_>) -> Result<Decision> {
        Ok(SoftMask::dense(Grid::filled(r.hypothesis.width(), r.hypothesis.height(), self.0))?.into())
    }
}
