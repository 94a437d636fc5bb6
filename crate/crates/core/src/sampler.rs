//! Epipolar deformable-kernel sampling.
//!
//! For a `k × k` kernel the `k²` taps are laid out on the epipolar line in
//! row-major kernel order: tap `i` sits at `(i - (k² - 1)/2)` unit steps from
//! the point predicted by the hypothesis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, Camera, PairGeometry, PixelCoord};
use crate::grid::{Grid, Image};
use crate::neural::Tensor;

/// Tap layout of an epipolar kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarKernel {
    k: usize,
    offsets: Vec<i32>,
}

impl EpipolarKernel {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {k}")));
        }
        let n = (k * k) as i32;
        let half = (n - 1) / 2;
        Ok(Self {
            k,
            offsets: (0..n).map(|i| i - half).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn taps(&self) -> usize {
        self.offsets.len()
    }

    /// Line offset of each tap, in unit steps.
    pub fn offsets(&self) -> &[i32] {
        &self.offsets
    }
}

/// Per-pixel source coordinates of every kernel tap.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    width: usize,
    height: usize,
    source_dims: (usize, usize),
    kernel: EpipolarKernel,
    coords: Vec<PixelCoord>,
    valid: Vec<bool>,
    degenerate: Vec<bool>,
}

impl SampleGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Size of the source image the taps address.
    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn kernel(&self) -> &EpipolarKernel {
        &self.kernel
    }

    pub fn taps(&self) -> usize {
        self.kernel.taps()
    }

    /// Coordinates of the taps of pixel `(x, y)`.
    pub fn coords(&self, x: usize, y: usize) -> &[PixelCoord] {
        let n = self.taps();
        let base = (y * self.width + x) * n;
        &self.coords[base..base + n]
    }

    pub fn valid(&self, x: usize, y: usize) -> &[bool] {
        let n = self.taps();
        let base = (y * self.width + x) * n;
        &self.valid[base..base + n]
    }

    /// Whether the hypothesis-predicted (center) sample of `(x, y)` is valid.
    pub fn center_valid(&self, x: usize, y: usize) -> bool {
        self.valid(x, y)[self.taps() / 2]
    }

    pub fn center(&self, x: usize, y: usize) -> PixelCoord {
        self.coords(x, y)[self.taps() / 2]
    }

    /// Whether the epipolar tangent fell back to `(1, 0)` at `(x, y)`.
    pub fn degenerate(&self, x: usize, y: usize) -> bool {
        self.degenerate[y * self.width + x]
    }
}

/// Places the epipolar kernel taps for every reference pixel.
pub fn build_sample_grid(
    reference: &Camera,
    source: &Camera,
    inv_depth: &Grid<f64>,
    k: usize,
) -> Result<SampleGrid> {
    let kernel = EpipolarKernel::new(k)?;
    let pair = PairGeometry::new(reference, source);
    let (width, height) = inv_depth.dims();
    let n = kernel.taps();

    let rows: Vec<(Vec<PixelCoord>, Vec<bool>, Vec<bool>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut coords = Vec::with_capacity(width * n);
            let mut valid = Vec::with_capacity(width * n);
            let mut degenerate = Vec::with_capacity(width);
            for x in 0..width {
                let p = PixelCoord::new(x as f64, y as f64);
                let h = inv_depth.at(x, y);
                match pair.project(p, h) {
                    Some(c) => {
                        let step = pair.epipolar_unit_step(p, h);
                        degenerate.push(step.degenerate);
                        for &o in kernel.offsets() {
                            let o = o as f64;
                            coords.push(c.offset(o * step.dx, o * step.dy));
                            valid.push(true);
                        }
                    }
                    None => {
                        degenerate.push(false);
                        coords.extend(std::iter::repeat_n(PixelCoord::new(f64::NAN, f64::NAN), n));
                        valid.extend(std::iter::repeat_n(false, n));
                    }
                }
            }
            (coords, valid, degenerate)
        })
        .collect();

    let mut grid = SampleGrid {
        width,
        height,
        source_dims: pair.source_dims(),
        kernel,
        coords: Vec::with_capacity(width * height * n),
        valid: Vec::with_capacity(width * height * n),
        degenerate: Vec::with_capacity(width * height),
    };
    for (c, v, d) in rows {
        grid.coords.extend(c);
        grid.valid.extend(v);
        grid.degenerate.extend(d);
    }
    Ok(grid)
}

/// A multi-channel map that can be sampled bilinearly.
pub trait FeatureMap {
    type Value: num_traits::Float + Send + Sync;
    fn channels(&self) -> usize;
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn plane(&self, c: usize) -> &[Self::Value];
}

impl FeatureMap for Tensor {
    type Value = f32;
    fn channels(&self) -> usize {
        Tensor::channels(self)
    }
    fn width(&self) -> usize {
        Tensor::width(self)
    }
    fn height(&self) -> usize {
        Tensor::height(self)
    }
    fn plane(&self, c: usize) -> &[f32] {
        Tensor::plane(self, c)
    }
}

impl FeatureMap for Image {
    type Value = f64;
    fn channels(&self) -> usize {
        Image::channels(self)
    }
    fn width(&self) -> usize {
        Image::width(self)
    }
    fn height(&self) -> usize {
        Image::height(self)
    }
    fn plane(&self, c: usize) -> &[f64] {
        Image::plane(self, c).data()
    }
}

/// Gathered epipolar samples: per pixel a `channels × taps` block
/// (channel-major), plus one validity weight per tap.
#[derive(Debug, Clone)]
pub struct Gathered<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub taps: usize,
    pub values: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Copy> Gathered<T> {
    /// Block of pixel `(x, y)`: index `c * taps + i`.
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let n = self.channels * self.taps;
        let base = (y * self.width + x) * n;
        &self.values[base..base + n]
    }

    pub fn pixel_weights(&self, x: usize, y: usize) -> &[T] {
        let base = (y * self.width + x) * self.taps;
        &self.weights[base..base + self.taps]
    }
}

/// Samples `map` at every tap of `grid`. Invalid taps read as zero.
pub fn gather<M: FeatureMap + Sync>(map: &M, grid: &SampleGrid) -> Result<Gathered<M::Value>> {
    let (sw, sh) = (map.width(), map.height());
    if (sw, sh) != grid.source_dims {
        return Err(Error::mismatch(
            "gather: feature map vs grid source size",
            &[grid.source_dims.0, grid.source_dims.1],
            &[sw, sh],
        ));
    }
    let channels = map.channels();
    let taps = grid.taps();
    let zero = <M::Value as num_traits::Zero>::zero();
    let one = <M::Value as num_traits::One>::one();
    let width = grid.width;

    let rows: Vec<(Vec<M::Value>, Vec<M::Value>)> = (0..grid.height)
        .into_par_iter()
        .map(|y| {
            let mut values = Vec::with_capacity(width * channels * taps);
            let mut weights = Vec::with_capacity(width * taps);
            for x in 0..width {
                let coords = grid.coords(x, y);
                let valid = grid.valid(x, y);
                for c in 0..channels {
                    let plane = map.plane(c);
                    for i in 0..taps {
                        values.push(if valid[i] {
                            bilinear_sample(plane, sw, sh, coords[i])
                        } else {
                            zero
                        });
                    }
                }
                weights.extend(valid.iter().map(|&v| if v { one } else { zero }));
            }
            (values, weights)
        })
        .collect();

    let mut out = Gathered {
        width,
        height: grid.height,
        channels,
        taps,
        values: Vec::with_capacity(width * grid.height * channels * taps),
        weights: Vec::with_capacity(width * grid.height * taps),
    };
    for (v, w) in rows {
        out.values.extend(v);
        out.weights.extend(w);
    }
    Ok(out)
}

/// Checks that `grid` was built for a reference of the given size.
pub fn ensure_grid_dims(grid: &SampleGrid, width: usize, height: usize, context: &str) -> Result<()> {
    if grid.width != width || grid.height != height {
        return Err(Error::mismatch(context, &[width, height], &[grid.width, grid.height]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::intrinsics;
    use crate::rng::SplitMix64;
    use nalgebra::{Matrix3, Rotation3, Vector3};

    const F: f64 = 100.0;
    const BASELINE: f64 = 0.2;

    fn cam(t: Vector3<f64>, r: Matrix3<f64>, n: usize) -> Camera {
        let c = (n as f64 - 1.0) / 2.0;
        Camera::new(intrinsics(F, F, c, c), r, t, n, n).unwrap()
    }

    fn rectified(n: usize) -> (Camera, Camera) {
        (
            cam(Vector3::zeros(), Matrix3::identity(), n),
            cam(Vector3::new(-BASELINE, 0.0, 0.0), Matrix3::identity(), n),
        )
    }

    fn ramp(n: usize, a: f64, b: f64) -> Image {
        Image::gray(Grid::from_fn(n, n, |x, y| a * x as f64 + b * y as f64))
    }

    #[test]
    fn kernel_layout() {
        let k = EpipolarKernel::new(5).unwrap();
        assert_eq!(k.taps(), 25);
        assert_eq!(k.offsets()[0], -12);
        assert_eq!(k.offsets()[12], 0);
        assert_eq!(k.offsets()[24], 12);
        assert!(EpipolarKernel::new(4).is_err());
    }

    #[test]
    fn single_tap_is_projection() {
        let (r, s) = rectified(16);
        let h = Grid::filled(16, 16, 0.5);
        let g = build_sample_grid(&r, &s, &h, 1).unwrap();
        let q = g.coords(3, 9)[0];
        let expected = PairGeometry::new(&r, &s).project(PixelCoord::new(3.0, 9.0), 0.5).unwrap();
        assert_eq!(q, expected);
    }

    #[test]
    fn rectified_taps_are_integer_offsets() {
        let (r, s) = rectified(32);
        let h = Grid::filled(32, 32, 0.5);
        let g = build_sample_grid(&r, &s, &h, 5).unwrap();
        let c = g.center(20, 7);
        for (i, q) in g.coords(20, 7).iter().enumerate() {
            let o = i as f64 - 12.0;
            // step points toward increasing inverse depth, i.e. -x here
            assert!((q.x - (c.x - o)).abs() < 1e-9);
            assert!((q.y - c.y).abs() < 1e-9);
        }
    }

    #[test]
    fn taps_follow_the_epipolar_curve() {
        let mut rng = SplitMix64::new(21);
        let n = 128;
        let r = cam(Vector3::zeros(), Matrix3::identity(), n);
        let rot = Rotation3::from_euler_angles(0.05, -0.12, 0.03);
        let s = cam(Vector3::new(-0.4, 0.1, 0.05), *rot.matrix(), n);
        let pair = PairGeometry::new(&r, &s);
        let h = Grid::from_fn(n, n, |_, _| rng.uniform(0.5, 0.6));
        let g = build_sample_grid(&r, &s, &h, 5).unwrap();
        for (x, y) in [(5, 5), (64, 64), (120, 10), (30, 100)] {
            let p = PixelCoord::new(x as f64, y as f64);
            // dense sweep polyline over inverse depth
            let curve: Vec<PixelCoord> = (0..4000)
                .filter_map(|i| pair.project(p, 0.01 + i as f64 * 0.0005))
                .collect();
            for q in g.coords(x, y) {
                let d = curve
                    .windows(2)
                    .map(|w| point_segment_distance(*q, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 0.05, "tap off curve by {d}");
            }
        }
    }

    fn point_segment_distance(p: PixelCoord, a: PixelCoord, b: PixelCoord) -> f64 {
        let (vx, vy) = (b.x - a.x, b.y - a.y);
        let len2 = vx * vx + vy * vy;
        let t = if len2 > 0.0 {
            (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ((p.x - a.x - t * vx).powi(2) + (p.y - a.y - t * vy).powi(2)).sqrt()
    }

    #[test]
    fn gather_constant_and_integer() {
        let (r, s) = rectified(16);
        let h = Grid::filled(16, 16, 0.5);
        let g = build_sample_grid(&r, &s, &h, 3).unwrap();
        let constant = Image::gray(Grid::filled(16, 16, 0.25));
        let out = gather(&constant, &g).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.25));

        // disparity F * BASELINE * H = 10 px exactly
        let g1 = build_sample_grid(&r, &s, &h, 1).unwrap();
        let img = ramp(16, 1.0, 100.0);
        let out = gather(&img, &g1).unwrap();
        assert_eq!(out.pixel(12, 4)[0], 2.0 + 400.0);
    }

    #[test]
    fn ramp_gathers_arithmetic_progression() {
        let (r, s) = rectified(64);
        let h = Grid::filled(64, 64, 0.5);
        let g = build_sample_grid(&r, &s, &h, 5).unwrap();
        let out = gather(&ramp(64, 0.5, 3.0), &g).unwrap();
        let v = out.pixel(40, 30);
        // center at x = 30, taps x = 30 - o  → value 0.5*(30 - o) + 90
        for (i, &val) in v.iter().enumerate() {
            let o = i as f64 - 12.0;
            assert!((val - (0.5 * (30.0 - o) + 90.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_shift_permutes_taps() {
        let n = 64;
        let (r, s) = rectified(n);
        let mut rng = SplitMix64::new(2);
        let img = Image::gray(Grid::from_fn(n, n, |_, _| rng.next_f64()));
        let h0 = Grid::filled(n, n, 0.4);
        // projection moves by -F*BASELINE*dH = -1 px = one unit step
        let h1 = Grid::filled(n, n, 0.4 + 1.0 / (F * BASELINE));
        let a = gather(&img, &build_sample_grid(&r, &s, &h0, 5).unwrap()).unwrap();
        let b = gather(&img, &build_sample_grid(&r, &s, &h1, 5).unwrap()).unwrap();
        let (va, vb) = (a.pixel(50, 20), b.pixel(50, 20));
        for i in 0..24 {
            assert!((vb[i] - va[i + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn gather_is_linear() {
        let n = 32;
        let mut rng = SplitMix64::new(9);
        let r = cam(Vector3::zeros(), Matrix3::identity(), n);
        let s = cam(Vector3::new(-0.3, 0.05, 0.0), *Rotation3::from_euler_angles(0.02, 0.1, 0.0).matrix(), n);
        let h = Grid::from_fn(n, n, |_, _| rng.uniform(0.2, 0.8));
        let g = build_sample_grid(&r, &s, &h, 5).unwrap();
        let a = Image::gray(Grid::from_fn(n, n, |_, _| rng.next_f64()));
        let b = Image::gray(Grid::from_fn(n, n, |_, _| rng.next_f64()));
        let (alpha, beta) = (1.7, -0.4);
        let mix = Image::gray(Grid::from_fn(n, n, |x, y| {
            alpha * a.plane(0).at(x, y) + beta * b.plane(0).at(x, y)
        }));
        let ga = gather(&a, &g).unwrap();
        let gb = gather(&b, &g).unwrap();
        let gm = gather(&mix, &g).unwrap();
        for i in 0..gm.values.len() {
            assert!((gm.values[i] - (alpha * ga.values[i] + beta * gb.values[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_taps_read_zero() {
        let r = cam(Vector3::zeros(), Matrix3::identity(), 8);
        // source 5 units ahead; depth-1 points are behind it
        let s = cam(Vector3::new(0.0, 0.0, -5.0), Matrix3::identity(), 8);
        let g = build_sample_grid(&r, &s, &Grid::filled(8, 8, 1.0), 3).unwrap();
        assert!(!g.center_valid(2, 2));
        let out = gather(&Image::gray(Grid::filled(8, 8, 1.0)), &g).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert!(out.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gather_rejects_mismatched_map() {
        let (r, s) = rectified(16);
        let g = build_sample_grid(&r, &s, &Grid::filled(16, 16, 0.5), 1).unwrap();
        assert!(gather(&Image::gray(Grid::filled(8, 8, 0.0)), &g).is_err());
    }
}
