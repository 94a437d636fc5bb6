//! Classical photoconsistency decisions.
//!
//! Two probes bracket the current hypothesis at `±rho·|ΔR^t|` in inverse
//! depth. Each probe warps a fronto-parallel `w × w` reference window into the
//! source image and scores it with zero-mean normalized cross-correlation.
//! The decision is `σ(γ·(zncc(front) − zncc(behind)))`, where the front probe
//! is the one with the larger inverse depth.

use rayon::prelude::*;

use super::{Decision, DecisionOracle, DecisionRequest, SoftMask};
use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, PairGeometry, PixelCoord};
use crate::grid::Grid;

/// Reference windows with variance below this are treated as textureless.
pub const TEXTURELESS_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZnccConfig {
    /// Odd window size.
    pub window: usize,
    /// Probe offset as a fraction of the current step magnitude.
    pub rho: f64,
    /// Sigmoid sharpness applied to the ZNCC difference.
    pub gamma: f64,
}

impl Default for ZnccConfig {
    fn default() -> Self {
        Self {
            window: 7,
            rho: 0.5,
            gamma: 10.0,
        }
    }
}

impl ZnccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("ZNCC window must be odd, got {}", self.window)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ZnccOracle {
    config: ZnccConfig,
}

impl ZnccOracle {
    pub fn new(config: ZnccConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ZnccConfig {
        &self.config
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ZNCC of two equally long sample vectors; `None` when either is flat.
fn zncc(a: &[f64], b: &[f64], a_mean: f64, a_norm: f64) -> Option<f64> {
    let n = b.len() as f64;
    let b_mean = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut b_var = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dy = y - b_mean;
        cov += (x - a_mean) * dy;
        b_var += dy * dy;
    }
    if b_var / n < 1e-12 {
        return None;
    }
    Some(cov / (a_norm * b_var.sqrt()))
}

impl DecisionOracle for ZnccOracle {
    fn name(&self) -> &'static str {
        "zncc"
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision> {
        let scene = request.scene;
        let source = scene
            .sources
            .get(request.source)
            .ok_or_else(|| Error::Config(format!("no source view {}", request.source)))?;
        let hyp = request.hypothesis;
        let (width, height) = (scene.width(), scene.height());
        hyp.values().ensure_dims(width, height, "hypothesis vs reference")?;

        let reference = scene.reference.image.luminance();
        let target = source.image.luminance();
        let (sw, sh) = (target.width(), target.height());
        let pair = PairGeometry::new(&scene.reference.camera, &source.camera);

        let interval = hyp.interval();
        let offset = self.config.rho * hyp.step_size().abs();
        let radius = (self.config.window / 2) as isize;
        let gamma = self.config.gamma;

        let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..height)
            .into_par_iter()
            .map(|y| {
                let mut values = Vec::with_capacity(width);
                let mut valid = Vec::with_capacity(width);
                let mut ref_win = Vec::new();
                let mut win_px = Vec::new();
                let mut src_win = Vec::new();
                for x in 0..width {
                    let h = hyp.values().at(x, y);
                    let center_ok = pair
                        .project(PixelCoord::new(x as f64, y as f64), h)
                        .is_some_and(|q| q.in_bounds(sw, sh));
                    valid.push(center_ok);

                    ref_win.clear();
                    win_px.clear();
                    for dy in -radius..=radius {
                        for dx in -radius..=radius {
                            let qx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                            let qy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                            ref_win.push(reference.at(qx, qy));
                            win_px.push(PixelCoord::new(qx as f64, qy as f64));
                        }
                    }
                    let n = ref_win.len() as f64;
                    let ref_mean = ref_win.iter().sum::<f64>() / n;
                    let ref_ss: f64 = ref_win.iter().map(|v| (v - ref_mean).powi(2)).sum();
                    if ref_ss / n < TEXTURELESS_VARIANCE {
                        values.push(0.5);
                        continue;
                    }
                    let ref_norm = ref_ss.sqrt();

                    let mut score = |probe: f64| -> Option<f64> {
                        src_win.clear();
                        for &q in &win_px {
                            let s = pair.project(q, probe)?;
                            src_win.push(bilinear_sample(target.data(), sw, sh, s));
                        }
                        zncc(&ref_win, &src_win, ref_mean, ref_norm)
                    };
                    let front = interval.clamp(h + offset);
                    let behind = interval.clamp(h - offset);
                    let b = match (score(front), score(behind)) {
                        (Some(zf), Some(zb)) => sigmoid(gamma * (zf - zb)),
                        _ => 0.5,
                    };
                    values.push(b);
                }
                (values, valid)
            })
            .collect();

        let mut values = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for (v, ok) in rows {
            values.extend(v);
            valid.extend(ok);
        }
        let mask = SoftMask::new(
            Grid::from_vec(width, height, values)?,
            Grid::from_vec(width, height, valid)?,
        )?;
        Ok(mask.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(20.0) - 0.9999999979388463).abs() < 1e-15);
    }

    #[test]
    fn zncc_extremes() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let mean = 1.5;
        let norm = a.iter().map(|v: &f64| (v - mean).powi(2)).sum::<f64>().sqrt();
        assert!((zncc(&a, &[5.0, 7.0, 9.0, 11.0], mean, norm).unwrap() - 1.0).abs() < 1e-12);
        assert!((zncc(&a, &[3.0, 2.0, 1.0, 0.0], mean, norm).unwrap() + 1.0).abs() < 1e-12);
        assert!(zncc(&a, &[1.0; 4], mean, norm).is_none());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ZnccOracle::new(ZnccConfig { window: 4, ..Default::default() }).is_err());
        assert!(ZnccOracle::new(ZnccConfig { rho: 0.0, ..Default::default() }).is_err());
        assert!(ZnccOracle::new(ZnccConfig { gamma: -1.0, ..Default::default() }).is_err());
    }
}
