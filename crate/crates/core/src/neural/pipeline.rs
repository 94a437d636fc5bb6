//! Coarse-to-fine decision and weight evaluation across the three levels.

use super::graph::LEVELS;
use super::network::{image_tensor, Network};
use super::Tensor;
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::grid::{resize_bilinear, Grid, Image};
use crate::sampler::{build_sample_grid, SampleGrid};

/// Downscale factor of level `l` relative to full resolution.
pub fn level_factor(level: usize) -> usize {
    1 << (LEVELS - 1 - level)
}

/// Full-resolution dimensions must allow three levels with three internal
/// scales each.
pub fn check_dims(width: usize, height: usize) -> Result<()> {
    let f = level_factor(0) * 4;
    if !width.is_multiple_of(f) || !height.is_multiple_of(f) || width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "neural pipeline needs dimensions divisible by {f}, got {width}×{height}"
        )));
    }
    Ok(())
}

/// Pyramid features of one image.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub levels: [Tensor; 3],
}

pub fn extract_features(network: &Network, image: &Image) -> Result<ViewFeatures> {
    check_dims(image.width(), image.height())?;
    Ok(ViewFeatures {
        levels: network.run_fpn(&image_tensor(image))?,
    })
}

/// Sample grids of one level at its resolution, half and quarter.
pub fn level_grids(
    reference: &Camera,
    source: &Camera,
    inv_depth: &Grid<f64>,
    level: usize,
) -> Result<[SampleGrid; 3]> {
    let build = |s: usize| -> Result<SampleGrid> {
        let factor = level_factor(level) << s;
        let (w, h) = (reference.width() / factor, reference.height() / factor);
        let hyp = resize_bilinear(inv_depth, w, h);
        build_sample_grid(
            &reference.scaled(factor)?,
            &source.scaled(factor)?,
            &hyp,
            super::graph::EPIPOLAR_KERNEL,
        )
    };
    Ok([build(0)?, build(1)?, build(2)?])
}

/// Decision masks of all levels (coarsest first) plus the full-resolution
/// validity of the hypothesis-predicted sample.
pub struct LevelDecisions {
    pub masks: Vec<Tensor>,
    pub valid: Grid<bool>,
}

pub fn decide_levels(
    network: &Network,
    reference: &Camera,
    source: &Camera,
    features_r: &ViewFeatures,
    features_s: &ViewFeatures,
    inv_depth: &Grid<f64>,
) -> Result<LevelDecisions> {
    check_dims(inv_depth.width(), inv_depth.height())?;
    let mut masks = Vec::with_capacity(LEVELS);
    let mut fo: Option<Tensor> = None;
    let mut valid = None;
    for level in 0..LEVELS {
        let grids = level_grids(reference, source, inv_depth, level)?;
        let out = network.run_dnet_level(
            level,
            &features_r.levels[level],
            &features_s.levels[level],
            [&grids[0], &grids[1], &grids[2]],
            fo.as_ref(),
        )?;
        if level == LEVELS - 1 {
            let g = &grids[0];
            valid = Some(Grid::from_fn(g.width(), g.height(), |x, y| g.center_valid(x, y)));
        }
        masks.push(out.map);
        fo = Some(out.features);
    }
    Ok(LevelDecisions {
        masks,
        valid: valid.expect("at least one level"),
    })
}

/// Binary entropy with the decision clamped to `[1e-7, 1 - 1e-7]`.
pub fn entropy_tensor(mask: &Tensor) -> Tensor {
    mask.map(|b| crate::fusion::binary_entropy(b as f64) as f32)
}

/// Weight logits at full resolution from per-level decision masks
/// (coarsest first).
pub fn weight_logits(network: &Network, masks: &[Tensor]) -> Result<Tensor> {
    if masks.len() != LEVELS {
        return Err(Error::mismatch("weight network levels", &[LEVELS], &[masks.len()]));
    }
    let mut fo: Option<Tensor> = None;
    let mut logits = None;
    for (level, m) in masks.iter().enumerate() {
        let out = network.run_wnet_level(level, &entropy_tensor(m), fo.as_ref())?;
        logits = Some(out.map);
        fo = Some(out.features);
    }
    Ok(logits.expect("three levels"))
}
