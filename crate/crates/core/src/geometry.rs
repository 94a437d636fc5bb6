//! Pinhole cameras, two-view projection in inverse depth, epipolar steps and
//! bilinear sampling.
//!
//! Pixel convention: `x` grows rightward, `y` downward, and `(0, 0)` is the
//! center of the top-left pixel. Depth is the camera-frame `z` coordinate.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};
use num_traits::Float;

use crate::error::{Error, Result};

/// Relative finite-difference step for epipolar tangents.
pub const EPIPOLAR_EPS: f64 = 1e-4;
/// Tangents shorter than this (in pixels) are considered degenerate.
pub const DEGENERATE_TANGENT: f64 = 1e-12;

/// Intrinsics plus a world-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(
        k: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("zero image dimension".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera("intrinsics must be upper-triangular".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera(
                "intrinsics need positive focal lengths and K[2,2] = 1".into(),
            ));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-9) || rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR - I| = {ortho:e})"
            )));
        }
        if k.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
        Ok(Self {
            k,
            k_inv,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// From a 3×4 `[R | t]` block.
    pub fn from_rt(k: Matrix3<f64>, rt: &Matrix3x4<f64>, width: usize, height: usize) -> Result<Self> {
        let rotation = rt.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = rt.column(3).into_owned();
        Self::new(k, rotation, translation, width, height)
    }

    /// Camera centered at `center` whose optical axis passes through `target`.
    /// The image `y` axis follows the world `+y` direction as closely as possible.
    pub fn look_at(
        k: Matrix3<f64>,
        center: Vector3<f64>,
        target: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("target coincides with center".into()))?;
        let down = Vector3::new(0.0, 1.0, 0.0);
        let x = down
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("optical axis parallel to world y".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Self::new(k, rotation, translation, width, height)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rt(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        rt
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World → camera frame.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Pixel of a world point, or `None` when it is not in front of the camera.
    pub fn project_world(&self, world: &Vector3<f64>) -> Option<PixelCoord> {
        let c = self.to_camera(world);
        if !(c.z > 0.0) {
            return None;
        }
        let h = self.k * c;
        let p = PixelCoord::new(h.x / h.z, h.y / h.z);
        p.is_finite().then_some(p)
    }

    /// Same camera observing an image downscaled by `factor` (e.g. 2 for half
    /// resolution) with align-corners-false resampling: `x' = (x + 0.5)/factor - 0.5`.
    pub fn scaled(&self, factor: usize) -> Result<Camera> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::InvalidCamera(format!(
                "{}×{} image cannot be downscaled by {factor}",
                self.width, self.height
            )));
        }
        let s = factor as f64;
        let mut k = self.k / s;
        k[(2, 2)] = 1.0;
        k[(0, 2)] = (self.k[(0, 2)] + 0.5) / s - 0.5;
        k[(1, 2)] = (self.k[(1, 2)] + 0.5) / s - 0.5;
        Camera::new(
            k,
            self.rotation,
            self.translation,
            self.width / factor,
            self.height / factor,
        )
    }

    /// Full 4×4 world-to-camera matrix.
    pub fn extrinsic_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Intrinsic matrix from focal lengths and principal point.
pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

/// A feasible depth range expressed in inverse depth.
///
/// `half_width` keeps its sign: for `d_min < d_max` the inverse bounds are
/// ordered `inv_max < inv_min` and `half_width < 0`. With that convention the
/// hypothesis update `H - half_width/2^(t+1) * (2B - 1)` moves toward the
/// camera when `B = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepthInterval {
    d_min: f64,
    d_max: f64,
    midpoint: f64,
    half_width: f64,
}

impl InverseDepthInterval {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && d_min > 0.0 && d_max > 0.0 && d_min <= d_max)
        {
            return Err(Error::InvalidRange { d_min, d_max });
        }
        let inv_min = 1.0 / d_min;
        let inv_max = 1.0 / d_max;
        Ok(Self {
            d_min,
            d_max,
            midpoint: (inv_max + inv_min) / 2.0,
            half_width: (inv_max - inv_min) / 2.0,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Inverse of the nearest depth; evaluated as `midpoint - half_width`.
    pub fn inv_min(&self) -> f64 {
        self.midpoint - self.half_width
    }

    /// Inverse of the farthest depth; evaluated as `midpoint + half_width`.
    pub fn inv_max(&self) -> f64 {
        self.midpoint + self.half_width
    }

    /// Signed half-width `(inv_max - inv_min) / 2`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn midpoint(&self) -> f64 {
        self.midpoint
    }

    /// Lower and upper bound in ascending order.
    pub fn bounds(&self) -> (f64, f64) {
        let (a, b) = (self.inv_min(), self.inv_max());
        (a.min(b), a.max(b))
    }

    pub fn clamp(&self, inv_depth: f64) -> f64 {
        let (lo, hi) = self.bounds();
        inv_depth.clamp(lo, hi)
    }

    pub fn contains(&self, inv_depth: f64) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&inv_depth)
    }
}

/// Continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Inside `[0, width-1] × [0, height-1]`.
    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.is_finite()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x <= (width - 1) as f64
            && self.y <= (height - 1) as f64
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// Precomputed relative geometry of a reference/source camera pair.
///
/// A reference pixel `p` at inverse depth `H` maps to the homogeneous source
/// point `M p̃ + H b` with `M = K_s R_rel K_r⁻¹` and `b = K_s t_rel`.
#[derive(Debug, Clone)]
pub struct PairGeometry {
    m: Matrix3<f64>,
    b: Vector3<f64>,
    src_width: usize,
    src_height: usize,
}

impl PairGeometry {
    pub fn new(reference: &Camera, source: &Camera) -> Self {
        let r_rel = source.rotation * reference.rotation.transpose();
        let t_rel = source.translation - r_rel * reference.translation;
        Self {
            m: source.k * r_rel * reference.k_inv,
            b: source.k * t_rel,
            src_width: source.width,
            src_height: source.height,
        }
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.src_width, self.src_height)
    }

    /// Source coordinate of reference pixel `p` at inverse depth `inv_depth`;
    /// `None` behind the source camera or when non-finite.
    #[inline]
    pub fn project(&self, p: PixelCoord, inv_depth: f64) -> Option<PixelCoord> {
        let m = &self.m;
        let hx = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] + inv_depth * self.b.x;
        let hy = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] + inv_depth * self.b.y;
        let hz = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] + inv_depth * self.b.z;
        // hz = H * z_src, so its sign is the sign of the source depth
        if !(hz > 0.0) || !(inv_depth > 0.0) {
            return None;
        }
        let q = PixelCoord::new(hx / hz, hy / hz);
        q.is_finite().then_some(q)
    }

    /// Unit tangent of `H ↦ project(p, H)` oriented toward increasing inverse depth.
    pub fn epipolar_unit_step(&self, p: PixelCoord, inv_depth: f64) -> EpipolarStep {
        let dh = EPIPOLAR_EPS * inv_depth;
        let ahead = self.project(p, inv_depth + dh);
        let behind = self.project(p, inv_depth - dh);
        if let (Some(a), Some(b)) = (ahead, behind) {
            let d = Vector2::new(a.x - b.x, a.y - b.y);
            let n = d.norm();
            if n >= DEGENERATE_TANGENT && n.is_finite() {
                return EpipolarStep {
                    dx: d.x / n,
                    dy: d.y / n,
                    degenerate: false,
                };
            }
        }
        EpipolarStep {
            dx: 1.0,
            dy: 0.0,
            degenerate: true,
        }
    }
}

/// Unit pixel-space direction along the epipolar curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarStep {
    pub dx: f64,
    pub dy: f64,
    /// The tangent vanished and `(1, 0)` was substituted.
    pub degenerate: bool,
}

/// Projects reference pixel `p` at inverse depth `inv_depth` into the source camera.
pub fn project(reference: &Camera, source: &Camera, p: PixelCoord, inv_depth: f64) -> Option<PixelCoord> {
    PairGeometry::new(reference, source).project(p, inv_depth)
}

pub fn epipolar_unit_step(
    reference: &Camera,
    source: &Camera,
    p: PixelCoord,
    inv_depth: f64,
) -> EpipolarStep {
    PairGeometry::new(reference, source).epipolar_unit_step(p, inv_depth)
}

/// World point on the ray through `p` at camera-frame depth `depth`.
pub fn back_project(camera: &Camera, p: PixelCoord, depth: f64) -> Vector3<f64> {
    let ray = camera.k_inv * Vector3::new(p.x, p.y, 1.0);
    let cam = ray * (depth / ray.z);
    camera.rotation.transpose() * (cam - camera.translation)
}

/// Bilinear interpolation in a row-major single-channel buffer with
/// clamp-to-edge borders.
#[inline]
pub fn bilinear_sample<T: Float>(data: &[T], width: usize, height: usize, p: PixelCoord) -> T {
    debug_assert_eq!(data.len(), width * height);
    let x = p.x.clamp(0.0, (width - 1) as f64);
    let y = p.y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = T::from(x - x0 as f64).unwrap_or_else(T::zero);
    let fy = T::from(y - y0 as f64).unwrap_or_else(T::zero);
    let one = T::one();
    let top = data[y0 * width + x0] * (one - fx) + data[y0 * width + x1] * fx;
    let bottom = data[y1 * width + x0] * (one - fx) + data[y1 * width + x1] * fx;
    top * (one - fy) + bottom * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use nalgebra::{Rotation3, Vector4};

    fn k128() -> Matrix3<f64> {
        intrinsics(100.0, 100.0, 63.5, 63.5)
    }

    fn identity_cam() -> Camera {
        Camera::new(k128(), Matrix3::identity(), Vector3::zeros(), 128, 128).unwrap()
    }

    fn shifted_cam(tx: f64) -> Camera {
        Camera::new(k128(), Matrix3::identity(), Vector3::new(tx, 0.0, 0.0), 128, 128).unwrap()
    }

    fn random_rig(rng: &mut SplitMix64) -> (Camera, Camera) {
        let r1 = Rotation3::from_euler_angles(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        let r2 = Rotation3::from_euler_angles(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
        let t1 = Vector3::new(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        let t2 = Vector3::new(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1));
        (
            Camera::new(k128(), *r1.matrix(), t1, 128, 128).unwrap(),
            Camera::new(intrinsics(110.0, 105.0, 60.0, 66.0), *r2.matrix(), t2, 128, 128).unwrap(),
        )
    }

    #[test]
    fn interval_examples() {
        let i = InverseDepthInterval::new(0.5, 2.0).unwrap();
        assert_eq!(i.inv_min(), 2.0);
        assert_eq!(i.inv_max(), 0.5);
        assert_eq!(i.half_width(), -0.75);
        assert_eq!(i.midpoint(), 1.25);

        let i = InverseDepthInterval::new(1.0, 1.0).unwrap();
        assert_eq!(i.half_width(), 0.0);
        assert_eq!(i.midpoint(), 1.0);

        let i = InverseDepthInterval::new(0.4, 1000.0).unwrap();
        assert!((i.inv_min() - 2.5).abs() < 1e-12);
        assert!((i.inv_max() - 0.001).abs() < 1e-12);
        assert!((i.half_width() + 1.2495).abs() < 1e-12);
    }

    #[test]
    fn interval_rejects_bad_ranges() {
        for (a, b) in [(0.0, 1.0), (-1.0, 2.0), (2.0, 1.0), (f64::NAN, 1.0), (1.0, f64::INFINITY)] {
            assert!(matches!(InverseDepthInterval::new(a, b), Err(Error::InvalidRange { .. })));
        }
    }

    #[test]
    fn camera_validation() {
        let mut k = k128();
        k[(1, 0)] = 0.5;
        assert!(Camera::new(k, Matrix3::identity(), Vector3::zeros(), 8, 8).is_err());
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.0 + 1e-6;
        assert!(Camera::new(k128(), r, Vector3::zeros(), 8, 8).is_err());
        assert!(Camera::new(k128(), -Matrix3::<f64>::identity(), Vector3::zeros(), 8, 8).is_err());
    }

    #[test]
    fn identical_cameras_project_to_same_pixel() {
        let c = identity_cam();
        for h in [0.1, 1.0, 7.0] {
            let q = project(&c, &c, PixelCoord::new(12.25, 99.5), h).unwrap();
            assert!((q.x - 12.25).abs() < 1e-12 && (q.y - 99.5).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_parallax_at_infinity() {
        let q = project(&identity_cam(), &shifted_cam(-0.3), PixelCoord::new(40.0, 20.0), 1e-9).unwrap();
        assert!((q.x - 40.0).abs() < 1e-6 && (q.y - 20.0).abs() < 1e-12);
    }

    #[test]
    fn behind_source_camera_is_invalid() {
        // source sits at z = 5 looking along +z; a point at depth 1 is behind it
        let src = Camera::new(k128(), Matrix3::identity(), Vector3::new(0.0, 0.0, -5.0), 128, 128).unwrap();
        assert!(project(&identity_cam(), &src, PixelCoord::new(64.0, 64.0), 1.0).is_none());
    }

    /// Independent route: homogeneous 4×4 world-to-camera matrices.
    fn project_by_matrices(r: &Camera, s: &Camera, p: PixelCoord, inv_depth: f64) -> (Vector3<f64>, PixelCoord) {
        let d = 1.0 / inv_depth;
        let ray = r.k().try_inverse().unwrap() * Vector3::new(p.x, p.y, 1.0);
        let cam = Vector4::new(ray.x * d, ray.y * d, d, 1.0);
        let world = r.extrinsic_matrix().try_inverse().unwrap() * cam;
        let sc = s.extrinsic_matrix() * world;
        let pix = s.k() * sc.xyz();
        (world.xyz(), PixelCoord::new(pix.x / pix.z, pix.y / pix.z))
    }

    #[test]
    fn projection_round_trip_matches_matrix_algebra() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..200 {
            let (r, s) = random_rig(&mut rng);
            let p = PixelCoord::new(rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0));
            let h = rng.uniform(0.2, 1.0);
            let q = project(&r, &s, p, h).unwrap();
            let (world, q_ref) = project_by_matrices(&r, &s, p, h);
            assert!((q.x - q_ref.x).abs() < 1e-6 && (q.y - q_ref.y).abs() < 1e-6);
            let src_depth = s.to_camera(&world).z;
            let back = back_project(&s, q, src_depth);
            assert!((back - world).norm() < 1e-6, "{back} vs {world}");
        }
    }

    #[test]
    fn back_project_canonical() {
        let c = Camera::new(Matrix3::identity(), Matrix3::identity(), Vector3::zeros(), 4, 4).unwrap();
        let x = back_project(&c, PixelCoord::new(0.0, 0.0), 1.0);
        assert_eq!(x, Vector3::new(0.0, 0.0, 1.0));
        let a = back_project(&identity_cam(), PixelCoord::new(10.0, 3.0), 1.5);
        let b = back_project(&identity_cam(), PixelCoord::new(10.0, 3.0), 4.5);
        assert!((b - a * 3.0).norm() < 1e-12);
    }

    #[test]
    fn projection_is_scale_consistent() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..100 {
            let (r, s) = random_rig(&mut rng);
            let scale = |c: &Camera| {
                Camera::new(*c.k(), *c.rotation(), c.translation() * 10.0, 128, 128).unwrap()
            };
            let p = PixelCoord::new(rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0));
            let h = rng.uniform(0.2, 1.0);
            let a = project(&r, &s, p, h).unwrap();
            let b = project(&scale(&r), &scale(&s), p, h / 10.0).unwrap();
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn rectified_pair_has_horizontal_step() {
        let st = epipolar_unit_step(&identity_cam(), &shifted_cam(-0.2), PixelCoord::new(30.0, 70.0), 0.7);
        assert!(!st.degenerate);
        assert!((st.dx.abs() - 1.0).abs() < 1e-9 && st.dy.abs() < 1e-9);
        // source to the right: nearer points shift left
        assert!(st.dx < 0.0);
    }

    #[test]
    fn forward_motion_at_epipole_is_degenerate() {
        let src = Camera::new(k128(), Matrix3::identity(), Vector3::new(0.0, 0.0, -0.1), 128, 128).unwrap();
        let st = epipolar_unit_step(&identity_cam(), &src, PixelCoord::new(63.5, 63.5), 0.5);
        assert!(st.degenerate);
        assert_eq!((st.dx, st.dy), (1.0, 0.0));
    }

    #[test]
    fn step_is_unit_and_collinear_with_dense_sweep() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..100 {
            let (r, s) = random_rig(&mut rng);
            let pair = PairGeometry::new(&r, &s);
            let p = PixelCoord::new(rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0));
            let h = rng.uniform(0.3, 1.0);
            let st = pair.epipolar_unit_step(p, h);
            assert!(((st.dx * st.dx + st.dy * st.dy).sqrt() - 1.0).abs() < 1e-9);
            let c = pair.project(p, h).unwrap();
            for k in -5..=5 {
                let q = pair.project(p, h + k as f64 * 1e-3 * h).unwrap();
                // distance from q to the line through c along the step
                let dist = ((q.x - c.x) * st.dy - (q.y - c.y) * st.dx).abs();
                assert!(dist < 0.01, "off-line by {dist}");
            }
        }
    }

    #[test]
    fn step_rotates_with_in_plane_camera_rotation() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..50 {
            let (r, s) = random_rig(&mut rng);
            let theta: f64 = rng.uniform(-1.0, 1.0);
            let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), theta);
            let k = intrinsics(100.0, 100.0, 63.5, 63.5);
            let s = Camera::new(k, *s.rotation(), *s.translation(), 128, 128).unwrap();
            let s_rot = Camera::new(k, rz.matrix() * s.rotation(), rz * s.translation(), 128, 128).unwrap();
            let p = PixelCoord::new(rng.uniform(10.0, 117.0), rng.uniform(10.0, 117.0));
            let a = epipolar_unit_step(&r, &s, p, 0.5);
            let b = epipolar_unit_step(&r, &s_rot, p, 0.5);
            let (c, sn) = (theta.cos(), theta.sin());
            let ax = c * a.dx - sn * a.dy;
            let ay = sn * a.dx + c * a.dy;
            assert!((ax - b.dx).abs() < 1e-6 && (ay - b.dy).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_examples() {
        let data = vec![0.0, 1.0, 2.0, 3.0];
        assert_eq!(bilinear_sample(&data, 2, 2, PixelCoord::new(1.0, 1.0)), 3.0);
        assert_eq!(bilinear_sample(&data, 2, 2, PixelCoord::new(0.5, 0.0)), 0.5);
        let c = vec![4.25f32; 12];
        for p in [(-3.0, 1.0), (1.5, 1.5), (10.0, -10.0)] {
            assert_eq!(bilinear_sample(&c, 4, 3, PixelCoord::new(p.0, p.1)), 4.25);
        }
    }

    #[test]
    fn bilinear_exact_on_affine_fields() {
        let (a, b, c) = (0.3, -1.7, 2.0);
        let field: Vec<f64> = (0..20 * 10).map(|i| a * (i % 20) as f64 + b * (i / 20) as f64 + c).collect();
        let mut rng = SplitMix64::new(1);
        for _ in 0..500 {
            let (x, y) = (rng.uniform(0.0, 19.0), rng.uniform(0.0, 9.0));
            let v = bilinear_sample(&field, 20, 10, PixelCoord::new(x, y));
            assert!((v - (a * x + b * y + c)).abs() < 1e-6);
        }
    }

    #[test]
    fn scaled_camera_maps_pixel_centers() {
        let c = identity_cam();
        let half = c.scaled(2).unwrap();
        assert_eq!((half.width(), half.height()), (64, 64));
        let world = Vector3::new(0.1, -0.05, 2.0);
        let p = c.project_world(&world).unwrap();
        let q = half.project_world(&world).unwrap();
        assert!(((p.x + 0.5) / 2.0 - 0.5 - q.x).abs() < 1e-12);
        assert!(c.scaled(3).is_err());
    }
}
