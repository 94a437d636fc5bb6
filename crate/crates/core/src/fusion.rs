//! Confidence weights and multi-source hypothesis fusion.

use std::sync::Arc;

use crate::decision::{Decision, SoftMask};
use crate::engine::HypothesisMap;
use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, Grid};
use crate::neural::{pipeline, Network, Tensor};

/// Clamp applied to decisions before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-7;
/// Lower bound of fusion weights.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Offset keeping heuristic weights strictly positive.
pub const HEURISTIC_EPS: f64 = 1e-6;

/// `-(b ln b + (1-b) ln(1-b))` with `b` clamped to `[1e-7, 1-1e-7]`.
#[inline]
pub fn binary_entropy(b: f64) -> f64 {
    let b = b.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    -(b * b.ln() + (1.0 - b) * (1.0 - b).ln())
}

/// Pixelwise entropy of a decision mask, in `[0, ln 2]`.
pub fn entropy(mask: &SoftMask) -> Grid<f64> {
    mask.values().map(|&b| binary_entropy(b))
}

/// Strictly positive per-pixel fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(Grid<f64>);

impl WeightMap {
    pub fn new(values: Grid<f64>) -> Result<Self> {
        if let Some(v) = values.data().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Invariant(format!("fusion weight {v} is not positive and finite")));
        }
        Ok(Self(values))
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 1.0))
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.0
    }
}

/// `W = exp(-w)`, floored at `1e-12`.
pub fn weight_from_logit(logits: &Grid<f64>) -> Result<WeightMap> {
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("non-finite weight logit".into()));
    }
    WeightMap::new(logits.map(|&w| (-w).exp().max(WEIGHT_FLOOR)))
}

/// Training-free confidence: `1 - E(B)/ln 2 + 1e-6`, and `1e-6` where the
/// decision is invalid.
pub fn heuristic_weight(mask: &SoftMask) -> WeightMap {
    let ln2 = std::f64::consts::LN_2;
    let values = Grid::from_fn(mask.width(), mask.height(), |x, y| {
        if *mask.validity().get(x, y) {
            (1.0 - binary_entropy(mask.values().at(x, y)) / ln2).max(0.0) + HEURISTIC_EPS
        } else {
            HEURISTIC_EPS
        }
    });
    WeightMap(values)
}

/// Weighted mean `Σ W_s H_s / Σ W_s` per pixel.
///
/// Evaluated as `H_0 + Σ W_s (H_s - H_0) / Σ W_s`, so a single source, or
/// identical sources, reproduce `H_0` exactly; the result is clamped to the
/// per-pixel range of the inputs.
pub fn fuse_hypotheses(hypotheses: &[Grid<f64>], weights: &[&Grid<f64>]) -> Result<Grid<f64>> {
    let first = hypotheses.first().ok_or(Error::EmptyInput("hypotheses to fuse"))?;
    if weights.len() != hypotheses.len() {
        return Err(Error::mismatch("fusion weights", &[hypotheses.len()], &[weights.len()]));
    }
    let (w, h) = first.dims();
    for g in hypotheses {
        g.ensure_dims(w, h, "fused hypothesis")?;
    }
    for g in weights {
        g.ensure_dims(w, h, "fusion weight")?;
    }
    let n = w * h;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = first.data()[i];
        let mut total = 0.0;
        let mut acc = 0.0;
        let mut lo = anchor;
        let mut hi = anchor;
        for (hs, ws) in hypotheses.iter().zip(weights) {
            let (hv, wv) = (hs.data()[i], ws.data()[i]);
            total += wv;
            acc += wv * (hv - anchor);
            lo = lo.min(hv);
            hi = hi.max(hv);
        }
        out.push((anchor + acc / total).clamp(lo, hi));
    }
    Grid::from_vec(w, h, out)
}

/// Unweighted mean in inverse depth; identical to [`fuse_hypotheses`] with
/// equal weights.
pub fn naive_fuse(hypotheses: &[Grid<f64>]) -> Result<Grid<f64>> {
    let first = hypotheses.first().ok_or(Error::EmptyInput("hypotheses to fuse"))?;
    let ones = Grid::filled(first.width(), first.height(), 1.0);
    let weights: Vec<&Grid<f64>> = hypotheses.iter().map(|_| &ones).collect();
    fuse_hypotheses(hypotheses, &weights)
}

/// Maps a decision to fusion weights.
pub trait WeightOracle: Send + Sync {
    fn name(&self) -> &'static str;

    fn weights(&self, decision: &Decision, hypothesis: &HypothesisMap) -> Result<WeightMap>;
}

/// Equal weights everywhere: the naive-average baseline.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformWeights;

impl WeightOracle for UniformWeights {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weights(&self, decision: &Decision, _: &HypothesisMap) -> Result<WeightMap> {
        Ok(WeightMap::uniform(decision.mask.width(), decision.mask.height()))
    }
}

/// Entropy-derived confidence, see [`heuristic_weight`].
#[derive(Debug, Default, Clone, Copy)]
pub struct EntropyWeights;

impl WeightOracle for EntropyWeights {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn weights(&self, decision: &Decision, _: &HypothesisMap) -> Result<WeightMap> {
        Ok(heuristic_weight(&decision.mask))
    }
}

/// Weights predicted by the weight network from per-level decision entropies.
///
/// Oracles that only produce a full-resolution mask get their coarser levels
/// by bilinear downscaling.
#[derive(Debug, Clone)]
pub struct NeuralWeights {
    network: Arc<Network>,
}

impl NeuralWeights {
    pub fn new(network: Arc<Network>) -> Self {
        Self { network }
    }
}

impl WeightOracle for NeuralWeights {
    fn name(&self) -> &'static str {
        "neural"
    }

    fn weights(&self, decision: &Decision, _: &HypothesisMap) -> Result<WeightMap> {
        let (w, h) = (decision.mask.width(), decision.mask.height());
        pipeline::check_dims(w, h)?;
        let full = decision.mask.values();
        let mut grids: Vec<Grid<f64>> = if decision.levels.len() == 2 {
            decision.levels.clone()
        } else {
            (0..2)
                .map(|l| {
                    let f = pipeline::level_factor(l);
                    resize_bilinear(full, w / f, h / f)
                })
                .collect()
        };
        grids.push(full.clone());
        let masks: Vec<Tensor> = grids
            .iter()
            .map(|g| Tensor::from_vec(1, g.height(), g.width(), g.data().iter().map(|&v| v as f32).collect()))
            .collect::<Result<_>>()?;
        let logits = pipeline::weight_logits(&self.network, &masks)?;
        let logits = Grid::from_vec(w, h, logits.data().iter().map(|&v| v as f64).collect())?;
        weight_from_logit(&logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, LN_2};

    fn g(v: &[f64]) -> Grid<f64> {
        Grid::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((binary_entropy(0.5) - LN_2).abs() < 1e-15);
        assert!((binary_entropy(0.0) - 1.7118e-6).abs() < 1e-9);
        assert!((binary_entropy(0.9) - 0.325083).abs() < 1e-6);
        for b in [0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((binary_entropy(b) - binary_entropy(1.0 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_examples() {
        let w = weight_from_logit(&g(&[0.0, LN_2, -1.0])).unwrap();
        assert_eq!(w.values().data()[0], 1.0);
        assert!((w.values().data()[1] - 0.5).abs() < 1e-15);
        assert!((w.values().data()[2] - E).abs() < 1e-12);
        assert!(weight_from_logit(&g(&[f64::NAN])).is_err());
        assert_eq!(weight_from_logit(&g(&[1e4])).unwrap().values().data()[0], WEIGHT_FLOOR);
    }

    #[test]
    fn heuristic_examples() {
        let m = SoftMask::new(g(&[0.0, 1.0, 0.5, 0.7, 0.6, 0.9]), Grid::from_vec(6, 1, vec![true, true, true, true, true, false]).unwrap()).unwrap();
        let w = heuristic_weight(&m);
        let v = w.values().data();
        assert!((v[0] - 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        assert!((v[2] - 1e-6).abs() < 1e-12);
        assert!(v[3] > v[4]);
        assert_eq!(v[5], HEURISTIC_EPS);
    }

    #[test]
    fn fusion_examples() {
        let one = fuse_hypotheses(&[g(&[1.3])], &[&g(&[1e-9])]).unwrap();
        assert_eq!(one.data()[0], 1.3);
        let mean = fuse_hypotheses(&[g(&[1.0]), g(&[2.0])], &[&g(&[1.0]), &g(&[1.0])]).unwrap();
        assert_eq!(mean.data()[0], 1.5);
        let w = weight_from_logit(&g(&[0.0, 20.0])).unwrap();
        let w0 = g(&[w.values().data()[0]]);
        let w1 = g(&[w.values().data()[1]]);
        let dom = fuse_hypotheses(&[g(&[1.0]), g(&[2.0])], &[&w0, &w1]).unwrap();
        let expected = (1.0 + 2.0 * (-20f64).exp()) / (1.0 + (-20f64).exp());
        assert!((dom.data()[0] - expected).abs() < 1e-15);
        assert!((dom.data()[0] - 1.000000002).abs() < 1e-9);
    }

    #[test]
    fn naive_examples() {
        assert_eq!(naive_fuse(&[g(&[1.0]), g(&[2.0]), g(&[3.0])]).unwrap().data()[0], 2.0);
        assert_eq!(naive_fuse(&[g(&[0.7])]).unwrap().data()[0], 0.7);
        assert!(naive_fuse(&[]).is_err());
        assert!(fuse_hypotheses(&[], &[]).is_err());
    }
}
