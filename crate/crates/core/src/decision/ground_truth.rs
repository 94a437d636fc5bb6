use super::{Decision, DecisionOracle, DecisionRequest, SoftMask};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Ideal decisions from a ground-truth depth map: `1` where `d_gt < 1/H`,
/// `0` otherwise (including equality). Pixels without ground truth are invalid.
pub fn ground_truth_mask(depth_gt: &Grid<f64>, inv_depth: &Grid<f64>) -> Result<SoftMask> {
    depth_gt.ensure_dims(inv_depth.width(), inv_depth.height(), "ground-truth depth vs hypothesis")?;
    let mut values = Vec::with_capacity(depth_gt.len());
    let mut valid = Vec::with_capacity(depth_gt.len());
    for (&d, &h) in depth_gt.data().iter().zip(inv_depth.data()) {
        let ok = d.is_finite() && d > 0.0 && h > 0.0;
        valid.push(ok);
        values.push(if ok && d < 1.0 / h { 1.0 } else { 0.0 });
    }
    SoftMask::new(
        Grid::from_vec(depth_gt.width(), depth_gt.height(), values)?,
        Grid::from_vec(depth_gt.width(), depth_gt.height(), valid)?,
    )
}

/// Oracle reading the reference view's ground-truth depth.
#[derive(Debug, Default, Clone, Copy)]
pub struct GroundTruthOracle;

impl DecisionOracle for GroundTruthOracle {
    fn name(&self) -> &'static str {
        "gt"
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision> {
        let depth = request
            .scene
            .reference
            .depth
            .as_ref()
            .ok_or_else(|| Error::Config("ground-truth oracle needs reference depth".into()))?;
        Ok(ground_truth_mask(depth, request.hypothesis.values())?.into())
    }
}
