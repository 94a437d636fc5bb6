//! Losses, depth-map error statistics and point-cloud accuracy/completeness.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use crate::decision::ground_truth_mask as gt_mask;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Clamp applied to predictions before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// `-(g ln b + (1 - g) ln(1 - b))` with `b` clamped to `[1e-7, 1 - 1e-7]`.
#[inline]
pub fn bce(b: f64, b_gt: f64) -> f64 {
    let b = b.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(b_gt * b.ln() + (1.0 - b_gt) * (1.0 - b).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    /// Mean BCE over valid pixels; `0` when there are none.
    pub value: f64,
    pub valid_pixels: usize,
}

impl MaskedLoss {
    /// `true` when no pixel was valid and the value is a placeholder.
    pub fn is_empty(&self) -> bool {
        self.valid_pixels == 0
    }
}

/// Mean BCE over the pixels where `valid` is set.
pub fn masked_bce_loss(b: &Grid<f64>, b_gt: &Grid<f64>, valid: &Grid<bool>) -> Result<MaskedLoss> {
    let (w, h) = b.dims();
    b_gt.ensure_dims(w, h, "ground-truth mask")?;
    valid.ensure_dims(w, h, "validity mask")?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, g), v) in b.data().iter().zip(b_gt.data()).zip(valid.data()) {
        if *v {
            sum += bce(*p, *g);
            n += 1;
        }
    }
    if n == 0 {
        log::warn!("masked BCE over an empty validity mask");
        return Ok(MaskedLoss {
            value: 0.0,
            valid_pixels: 0,
        });
    }
    Ok(MaskedLoss {
        value: sum / n as f64,
        valid_pixels: n,
    })
}

/// Per-level loss weights, coarsest level first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights(pub [f64; 3]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([0.25, 0.5, 1.0])
    }
}

impl LossWeights {
    pub fn new(lambda: [f64; 3]) -> Result<Self> {
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be non-negative, got {lambda:?}")));
        }
        Ok(Self(lambda))
    }
}

/// `Σ λ_k L_k`.
pub fn multiscale_loss(losses: [f64; 3], weights: &LossWeights) -> f64 {
    losses.iter().zip(weights.0).map(|(l, w)| l * w).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub median_abs: f64,
    /// `(δ, fraction of pixels with |error| ≤ δ)`.
    pub within: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthErrorStats {
    pub valid_pixels: usize,
    pub depth: ErrorStats,
    pub inverse_depth: ErrorStats,
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn error_stats(mut errors: Vec<f64>, thresholds: &[f64]) -> ErrorStats {
    let n = errors.len() as f64;
    let mean_abs = errors.iter().sum::<f64>() / n;
    let within = thresholds
        .iter()
        .map(|&t| (t, errors.iter().filter(|e| **e <= t).count() as f64 / n))
        .collect();
    ErrorStats {
        mean_abs,
        median_abs: median_of(&mut errors),
        within,
    }
}

/// Absolute errors of `depth` against `depth_gt` over pixels that are
/// valid, finite and positive in both maps. `thresholds` apply to both
/// the depth and the inverse-depth errors.
pub fn depth_error_stats(
    depth: &Grid<f64>,
    depth_gt: &Grid<f64>,
    valid: Option<&Grid<bool>>,
    thresholds: &[f64],
) -> Result<DepthErrorStats> {
    let (w, h) = depth.dims();
    depth_gt.ensure_dims(w, h, "ground-truth depth")?;
    if let Some(v) = valid {
        v.ensure_dims(w, h, "validity mask")?;
    }
    let ok = |d: f64| d.is_finite() && d > 0.0;
    let (mut de, mut ie) = (Vec::new(), Vec::new());
    for i in 0..w * h {
        let (d, g) = (depth.data()[i], depth_gt.data()[i]);
        if valid.is_some_and(|v| !v.data()[i]) || !ok(d) || !ok(g) {
            continue;
        }
        de.push((d - g).abs());
        ie.push((1.0 / d - 1.0 / g).abs());
    }
    if de.is_empty() {
        return Err(Error::EmptyInput("pixels with valid depth and ground truth"));
    }
    Ok(DepthErrorStats {
        valid_pixels: de.len(),
        depth: error_stats(de, thresholds),
        inverse_depth: error_stats(ie, thresholds),
    })
}

/// Exact nearest-neighbour queries on a uniform hash grid.
pub struct NearestIndex {
    points: Vec<Vector3<f64>>,
    cell: f64,
    origin: Vector3<f64>,
    cells: HashMap<[i64; 3], Vec<u32>>,
    max_ring: i64,
}

impl NearestIndex {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("points to index"));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max();
        // about one point per cell for surface-like clouds
        let cell = if extent > 0.0 {
            extent / (points.len() as f64).sqrt().max(1.0)
        } else {
            1.0
        };
        let mut index = Self {
            cell,
            origin: lo,
            cells: HashMap::new(),
            max_ring: 0,
            points: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            index.cells.entry(index.key(p)).or_default().push(i as u32);
        }
        index.max_ring = ((extent / cell).ceil() as i64) + 1;
        index.points = points;
        Ok(index)
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        let c = (p - self.origin) / self.cell;
        [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
    }

    /// Distance to the nearest indexed point.
    pub fn nearest(&self, q: &Vector3<f64>) -> f64 {
        let k = self.key(q);
        let outside = (0..3)
            .map(|a| {
                let max = (self.max_ring - 1).max(0);
                (-k[a]).max(k[a] - max).max(0)
            })
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        let mut r = 0i64;
        loop {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in ids {
                                best = best.min((self.points[i as usize] - q).norm());
                            }
                        }
                    }
                }
            }
            // anything in ring r + 1 is at least r cells away
            if best <= r as f64 * self.cell || r > self.max_ring + outside {
                return best;
            }
            r += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// Percentage of points within `τ`; aggregate is the F-score.
    Percentage,
    /// Mean nearest-neighbour distance; aggregate is the arithmetic mean.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMetrics {
    pub mode: MetricMode,
    pub tau: f64,
    /// `None` when the prediction is empty.
    pub accuracy: Option<f64>,
    pub completeness: f64,
    pub aggregate: Option<f64>,
    pub predicted_points: usize,
    pub gt_points: usize,
}

fn to_f64(cloud: &PointCloud) -> Vec<Vector3<f64>> {
    cloud.positions().collect()
}

fn directed(from: &[Vector3<f64>], to: &NearestIndex, tau: f64, mode: MetricMode) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|p| to.nearest(p)).collect();
    match mode {
        MetricMode::Percentage => 100.0 * d.iter().filter(|v| **v <= tau).count() as f64 / d.len() as f64,
        MetricMode::Distance => d.iter().sum::<f64>() / d.len() as f64,
    }
}

/// Harmonic mean of two percentages.
pub fn f_score(accuracy: f64, completeness: f64) -> f64 {
    if accuracy + completeness == 0.0 {
        0.0
    } else {
        2.0 * accuracy * completeness / (accuracy + completeness)
    }
}

/// Accuracy (prediction → ground truth) and completeness (ground truth →
/// prediction) with exact nearest neighbours.
pub fn cloud_accuracy_completeness(pred: &PointCloud, gt: &PointCloud, tau: f64, mode: MetricMode) -> Result<CloudMetrics> {
    if gt.is_empty() {
        return Err(Error::EmptyInput("ground-truth cloud"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("distance threshold must be positive, got {tau}")));
    }
    let (p, g) = (to_f64(pred), to_f64(gt));
    let base = CloudMetrics {
        mode,
        tau,
        accuracy: None,
        completeness: match mode {
            MetricMode::Percentage => 0.0,
            MetricMode::Distance => f64::INFINITY,
        },
        aggregate: None,
        predicted_points: p.len(),
        gt_points: g.len(),
    };
    if p.is_empty() {
        return Ok(base);
    }
    let accuracy = directed(&p, &NearestIndex::new(g.clone())?, tau, mode);
    let completeness = directed(&g, &NearestIndex::new(p)?, tau, mode);
    let aggregate = match mode {
        MetricMode::Percentage => f_score(accuracy, completeness),
        MetricMode::Distance => 0.5 * (accuracy + completeness),
    };
    Ok(CloudMetrics {
        accuracy: Some(accuracy),
        completeness,
        aggregate: Some(aggregate),
        ..base
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v}"))
}

impl CloudMetrics {
    fn mode_name(&self) -> &'static str {
        match self.mode {
            MetricMode::Percentage => "percentage",
            MetricMode::Distance => "distance",
        }
    }

    /// Flat `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode_name());
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "accuracy={}", opt(self.accuracy));
        let _ = writeln!(s, "completeness={}", self.completeness);
        let _ = writeln!(s, "aggregate={}", opt(self.aggregate));
        let _ = writeln!(s, "predicted_points={}", self.predicted_points);
        let _ = writeln!(s, "gt_points={}", self.gt_points);
        s
    }

    pub const CSV_HEADER: &'static str = "mode,tau,accuracy,completeness,aggregate,predicted_points,gt_points";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mode_name(),
            self.tau,
            opt(self.accuracy),
            self.completeness,
            opt(self.aggregate),
            self.predicted_points,
            self.gt_points
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn grid(v: Vec<f64>) -> Grid<f64> {
        Grid::from_vec(v.len(), 1, v).unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!(bce(1.0, 1.0) < 1.1e-7);
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, 0.3) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.9, 1.0) - 0.105360515657826).abs() < 1e-12);
        let mut rng = SplitMix64::new(1);
        for _ in 0..1000 {
            assert!(bce(rng.next_f64(), (rng.next_f64() > 0.5) as u8 as f64) >= 0.0);
        }
    }

    #[test]
    fn masked_loss_examples() {
        let b = grid(vec![0.2, 0.9, 0.5, 0.5]);
        let perfect = masked_bce_loss(&b, &b.map(|v| (*v > 0.5) as u8 as f64), &Grid::from_vec(4, 1, vec![false, true, false, false]).unwrap()).unwrap();
        assert!((perfect.value - bce(0.9, 1.0)).abs() < 1e-15);

        let half = grid(vec![0.5; 4]);
        let v = Grid::from_vec(4, 1, vec![true, false, true, false]).unwrap();
        let l = masked_bce_loss(&half, &grid(vec![1.0, 0.0, 0.0, 1.0]), &v).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.valid_pixels, 2);

        let none = masked_bce_loss(&half, &half, &Grid::filled(4, 1, false)).unwrap();
        assert!(none.is_empty() && none.value == 0.0);
        assert!(masked_bce_loss(&half, &grid(vec![0.0; 3]), &v).is_err());
    }

    #[test]
    fn masked_loss_ignores_invalid_pixels() {
        let mut rng = SplitMix64::new(2);
        let g = Grid::from_fn(8, 8, |_, _| (rng.next_f64() > 0.5) as u8 as f64);
        let v = Grid::from_fn(8, 8, |x, y| (x + y) % 3 != 0);
        let a = Grid::from_fn(8, 8, |_, _| rng.next_f64());
        let b = Grid::from_fn(8, 8, |x, y| if *v.get(x, y) { a.at(x, y) } else { rng.next_f64() });
        assert_eq!(masked_bce_loss(&a, &g, &v).unwrap(), masked_bce_loss(&b, &g, &v).unwrap());
    }

    #[test]
    fn multiscale_examples() {
        let w = LossWeights::default();
        assert_eq!(multiscale_loss([0.0; 3], &w), 0.0);
        assert_eq!(multiscale_loss([1.0; 3], &w), 1.75);
        assert_eq!(multiscale_loss([0.3, 0.7, 0.9], &LossWeights::new([0.0, 0.0, 1.0]).unwrap()), 0.9);
        assert!(LossWeights::new([-1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn depth_stats_examples() {
        let gt = grid(vec![1.0, 2.0, 4.0, f64::NAN]);
        let s = depth_error_stats(&gt, &gt, None, &[0.01]).unwrap();
        assert_eq!(s.valid_pixels, 3);
        assert_eq!((s.depth.mean_abs, s.depth.median_abs, s.depth.within[0].1), (0.0, 0.0, 1.0));
        assert_eq!(s.inverse_depth.within[0].1, 1.0);

        let shifted = gt.map(|d| d + 0.25);
        let s = depth_error_stats(&shifted, &gt, None, &[0.1, 0.3]).unwrap();
        assert!((s.depth.mean_abs - 0.25).abs() < 1e-15);
        assert_eq!(s.depth.within, vec![(0.1, 0.0), (0.3, 1.0)]);
        assert!(depth_error_stats(&gt, &grid(vec![f64::NAN; 4]), None, &[]).is_err());
    }

    #[test]
    fn depth_stats_match_reference_loop() {
        let mut rng = SplitMix64::new(3);
        let n = 257;
        let gt = grid((0..n).map(|_| rng.uniform(0.5, 3.0)).collect());
        let d = grid((0..n).map(|_| rng.uniform(0.5, 3.0)).collect());
        let v = Grid::from_vec(n, 1, (0..n).map(|_| rng.next_f64() > 0.2).collect()).unwrap();
        let s = depth_error_stats(&d, &gt, Some(&v), &[0.5]).unwrap();
        let mut errs = Vec::new();
        for i in 0..n {
            if v.data()[i] {
                errs.push((d.data()[i] - gt.data()[i]).abs());
            }
        }
        let mean: f64 = errs.iter().sum::<f64>() / errs.len() as f64;
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = errs.len();
        let median = if m % 2 == 1 { errs[m / 2] } else { (errs[m / 2 - 1] + errs[m / 2]) / 2.0 };
        assert!((s.depth.mean_abs - mean).abs() < 1e-9);
        assert!((s.depth.median_abs - median).abs() < 1e-9);
        let frac = errs.iter().filter(|e| **e <= 0.5).count() as f64 / m as f64;
        assert!((s.depth.within[0].1 - frac).abs() < 1e-9);
    }

    fn random_cloud(rng: &mut SplitMix64, n: usize, spread: f64) -> PointCloud {
        PointCloud::from_positions((0..n).map(|_| {
            [
                rng.uniform(-spread, spread) as f32,
                rng.uniform(-spread, spread) as f32,
                rng.uniform(0.0, spread * 0.2) as f32,
            ]
        }))
    }

    fn brute(pred: &PointCloud, gt: &PointCloud, tau: f64, mode: MetricMode) -> (f64, f64) {
        let p: Vec<_> = pred.positions().collect();
        let g: Vec<_> = gt.positions().collect();
        let dir = |a: &[Vector3<f64>], b: &[Vector3<f64>]| {
            let d: Vec<f64> = a.iter().map(|x| b.iter().map(|y| (y - x).norm()).fold(f64::INFINITY, f64::min)).collect();
            match mode {
                MetricMode::Percentage => 100.0 * d.iter().filter(|v| **v <= tau).count() as f64 / d.len() as f64,
                MetricMode::Distance => d.iter().sum::<f64>() / d.len() as f64,
            }
        };
        (dir(&p, &g), dir(&g, &p))
    }

    #[test]
    fn cloud_metrics_match_brute_force() {
        let mut rng = SplitMix64::new(4);
        for trial in 0..40 {
            let n = 1 + (rng.next_u64() % 500) as usize;
            let m = 1 + (rng.next_u64() % 500) as usize;
            let pred = random_cloud(&mut rng, n, 1.0);
            let gt = random_cloud(&mut rng, m, 1.0);
            let tau = rng.uniform(0.01, 0.2);
            for mode in [MetricMode::Percentage, MetricMode::Distance] {
                let c = cloud_accuracy_completeness(&pred, &gt, tau, mode).unwrap();
                let (a, k) = brute(&pred, &gt, tau, mode);
                assert_eq!((c.accuracy.unwrap(), c.completeness), (a, k), "trial {trial}");
            }
        }
    }

    #[test]
    fn nearest_handles_far_and_degenerate_queries() {
        let idx = NearestIndex::new(vec![Vector3::new(0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(idx.nearest(&Vector3::new(3.0, 4.0, 0.0)), 5.0);
        let idx = NearestIndex::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(idx.nearest(&Vector3::new(-100.0, 0.0, 0.0)), 100.0);
        assert_eq!(idx.nearest(&Vector3::new(0.9, 0.0, 0.0)), (0.9f64 - 1.0).abs());
    }

    #[test]
    fn cloud_metric_examples() {
        let mut rng = SplitMix64::new(5);
        let c = random_cloud(&mut rng, 200, 1.0);
        let m = cloud_accuracy_completeness(&c, &c, 1e-6, MetricMode::Percentage).unwrap();
        assert_eq!((m.accuracy, m.completeness, m.aggregate), (Some(100.0), 100.0, Some(100.0)));
        assert!((f_score(80.0, 40.0) - 160.0 / 3.0).abs() < 1e-12);

        let other = random_cloud(&mut rng, 150, 1.0);
        let ab = cloud_accuracy_completeness(&c, &other, 0.1, MetricMode::Percentage).unwrap();
        let ba = cloud_accuracy_completeness(&other, &c, 0.1, MetricMode::Percentage).unwrap();
        assert_eq!(ab.accuracy.unwrap(), ba.completeness);
        assert_eq!(ab.completeness, ba.accuracy.unwrap());
        let f = ab.aggregate.unwrap();
        let (a, k) = (ab.accuracy.unwrap(), ab.completeness);
        assert!(f <= a.max(k) && f >= a.min(k));

        let empty = cloud_accuracy_completeness(&PointCloud::default(), &c, 0.1, MetricMode::Percentage).unwrap();
        assert_eq!((empty.accuracy, empty.completeness), (None, 0.0));
        assert!(cloud_accuracy_completeness(&c, &PointCloud::default(), 0.1, MetricMode::Percentage).is_err());
        assert!(empty.report().contains("accuracy=nan\n"));
        assert_eq!(ab.csv_row().split(',').count(), CloudMetrics::CSV_HEADER.split(',').count());
    }
}
