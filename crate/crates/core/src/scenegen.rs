//! Deterministic synthetic scenes with analytic ground-truth depth.
//!
//! Scenes are ray cast at pixel centres with pure albedo (no shading), so a
//! surface point has the same intensity in every view. Textures are
//! functions of the world-space position, so they need no parametrization.
//! World `y` points down, matching the camera convention.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::decision::SoftMask;
use crate::error::{Error, Result};
use crate::geometry::{back_project, intrinsics, Camera, PixelCoord};
use crate::grid::{Grid, Image};
use crate::rng::hash3;
use crate::scene::{SceneBundle, View};

/// Relative depth tolerance of the co-visibility test.
pub const COVISIBILITY_TOLERANCE: f64 = 0.01;
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; defaults to the image width.
    #[serde(default)]
    pub focal: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub rig: Rig,
    pub primitives: Vec<Primitive>,
    /// Inverse-depth search range handed to inference, `[d_min, d_max]`.
    #[serde(default)]
    pub depth_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Centres on the x axis at `+b, -b, +2b, -2b, ...` around the reference.
    Line,
    /// Centres on a circle of radius `b` in the `z = 0` plane.
    Ring,
}

/// Camera rig. View 0 is the reference camera at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rig {
    pub count: usize,
    pub layout: Layout,
    pub baseline: f64,
    /// Every camera looks at `(0, 0, look_at)`; without it all cameras
    /// share the reference orientation.
    #[serde(default)]
    pub look_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Infinite plane through `point` with normal `normal`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        texture: Texture,
    },
    /// Parallelogram `center + a·u + b·v` for `a, b ∈ [-1, 1]`.
    Rectangle {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        texture: Texture,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Texture {
    Constant {
        value: f64,
    },
    /// Alternating cubes of edge `size`, values `0.2` and `0.8`.
    Checker {
        size: f64,
    },
    /// Fractal value noise in `[0, 1]`: `octaves` layers of trilinearly
    /// interpolated lattice noise, each at twice the frequency and `gain`
    /// times the amplitude of the previous one.
    Noise {
        /// Lattice cells per scene unit of the first octave.
        frequency: f64,
        #[serde(default = "default_octaves")]
        octaves: u32,
        #[serde(default = "default_gain")]
        gain: f64,
        /// Added to the scene seed.
        #[serde(default)]
        seed: u64,
    },
}

fn default_octaves() -> u32 {
    3
}

fn default_gain() -> f64 {
    0.5
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, p: Vector3<f64>) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smooth(p.x - fx), smooth(p.y - fy), smooth(p.z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let h = |dx, dy, dz| hash3(seed, ix + dx, iy + dy, iz + dz);
    let x00 = lerp(h(0, 0, 0), h(1, 0, 0), tx);
    let x10 = lerp(h(0, 1, 0), h(1, 1, 0), tx);
    let x01 = lerp(h(0, 0, 1), h(1, 0, 1), tx);
    let x11 = lerp(h(0, 1, 1), h(1, 1, 1), tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

impl Texture {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Texture::Constant { value } => value.is_finite(),
            Texture::Checker { size } => *size > 0.0 && size.is_finite(),
            Texture::Noise {
                frequency,
                octaves,
                gain,
                ..
            } => *frequency > 0.0 && frequency.is_finite() && *octaves >= 1 && *gain > 0.0 && gain.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Scene(format!("invalid texture {self:?}")))
        }
    }

    /// Albedo at a world point.
    pub fn sample(&self, scene_seed: u64, p: Vector3<f64>) -> f64 {
        match *self {
            Texture::Constant { value } => value,
            Texture::Checker { size } => {
                let s = (p / size).map(f64::floor);
                if (s.x + s.y + s.z).rem_euclid(2.0) < 1.0 {
                    0.2
                } else {
                    0.8
                }
            }
            Texture::Noise {
                frequency,
                octaves,
                gain,
                seed,
            } => {
                let base = scene_seed.wrapping_add(seed);
                let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, frequency);
                for o in 0..octaves {
                    sum += amp * value_noise(base.wrapping_add(o as u64), p * freq);
                    norm += amp;
                    amp *= gain;
                    freq *= 2.0;
                }
                sum / norm
            }
        }
    }
}

impl Primitive {
    fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. } | Primitive::Rectangle { texture, .. } | Primitive::Sphere { texture, .. } => {
                texture
            }
        }
    }

    fn validate(&self) -> Result<()> {
        self.texture().validate()?;
        let ok = match self {
            Primitive::Plane { normal, .. } => v3(*normal).norm() > 1e-12,
            Primitive::Rectangle { u, v, .. } => v3(*u).cross(&v3(*v)).norm() > 1e-12,
            Primitive::Sphere { radius, .. } => *radius > 0.0 && radius.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Scene(format!("degenerate primitive {self:?}")))
        }
    }

    /// Ray parameter of the nearest hit with `t > 0`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane { point, normal, .. } => plane_hit(origin, dir, &v3(*point), &v3(*normal)),
            Primitive::Rectangle { center, u, v, .. } => {
                let (c, u, v) = (v3(*center), v3(*u), v3(*v));
                let n = u.cross(&v);
                let t = plane_hit(origin, dir, &c, &n)?;
                let d = origin + dir * t - c;
                // coordinates in the (u, v) basis via the reciprocal basis
                let a = d.dot(&v.cross(&n)) / u.dot(&v.cross(&n));
                let b = d.dot(&n.cross(&u)) / v.dot(&n.cross(&u));
                (a.abs() <= 1.0 && b.abs() <= 1.0).then_some(t)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - v3(*center);
                let a = dir.norm_squared();
                let half_b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-half_b - sq) / a, (-half_b + sq) / a].into_iter().find(|t| *t > HIT_EPS)
            }
        }
    }

    /// Whether `p` lies strictly inside (spheres) or on (planes) the primitive.
    fn contains_camera(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let n = v3(*normal).normalize();
                (p - v3(*point)).dot(&n).abs() < 1e-9
            }
            Primitive::Rectangle { .. } => false,
            Primitive::Sphere { center, radius, .. } => (p - v3(*center)).norm() <= *radius,
        }
    }
}

fn plane_hit(origin: &Vector3<f64>, dir: &Vector3<f64>, point: &Vector3<f64>, normal: &Vector3<f64>) -> Option<f64> {
    let denom = normal.dot(dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = (point - origin).dot(normal) / denom;
    (t > HIT_EPS).then_some(t)
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Scene(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Scene("image dimensions must be positive".into()));
        }
        if self.rig.count < 1 {
            return Err(Error::Scene("rig needs at least one camera".into()));
        }
        if !(self.rig.baseline.is_finite() && self.rig.baseline >= 0.0) {
            return Err(Error::Scene("baseline must be finite and non-negative".into()));
        }
        if let Some(f) = self.focal {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Scene("focal length must be positive".into()));
            }
        }
        if let Some([lo, hi]) = self.depth_range {
            crate::geometry::InverseDepthInterval::new(lo, hi)?;
        }
        if self.primitives.is_empty() {
            return Err(Error::Scene("scene has no primitives".into()));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Rig cameras, reference first.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let (w, h) = (self.width, self.height);
        let f = self.focal.unwrap_or(w as f64);
        let k = intrinsics(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let b = self.rig.baseline;
        let n = self.rig.count;
        (0..n)
            .map(|i| {
                let center = if i == 0 {
                    Vector3::zeros()
                } else {
                    match self.rig.layout {
                        Layout::Line => {
                            let step = i.div_ceil(2) as f64 * b;
                            Vector3::new(if i % 2 == 1 { step } else { -step }, 0.0, 0.0)
                        }
                        Layout::Ring => {
                            let a = 2.0 * std::f64::consts::PI * (i - 1) as f64 / (n - 1) as f64;
                            Vector3::new(b * a.cos(), b * a.sin(), 0.0)
                        }
                    }
                };
                match self.rig.look_at {
                    Some(z) => Camera::look_at(k, center, Vector3::new(0.0, 0.0, z), w, h),
                    None => Camera::new(k, Matrix3::identity(), -center, w, h),
                }
            })
            .collect()
    }

    /// Nearest hit along a ray: `(t, primitive index)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Whether the world point `x` is unoccluded from `camera`'s centre.
    pub fn visible_from(&self, camera: &Camera, x: &Vector3<f64>) -> bool {
        let c = camera.center();
        let d = x - c;
        match self.cast(&c, &d) {
            Some((t, _)) => t >= 1.0 - 1e-7,
            None => true,
        }
    }

    /// Renders one view: albedo image and camera-space depth (`NaN` where
    /// the ray misses every primitive).
    pub fn render_view(&self, camera: &Camera) -> Result<View> {
        let c = camera.center();
        if let Some(p) = self.primitives.iter().find(|p| p.contains_camera(&c)) {
            return Err(Error::Scene(format!("camera at {c:?} lies inside {p:?}")));
        }
        let (w, h) = (camera.width(), camera.height());
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut albedo = Vec::with_capacity(w);
                let mut depth = Vec::with_capacity(w);
                for x in 0..w {
                    // a point at unit depth fixes the ray direction
                    let dir = back_project(camera, PixelCoord::new(x as f64, y as f64), 1.0) - c;
                    match self.cast(&c, &dir) {
                        Some((t, i)) => {
                            albedo.push(self.primitives[i].texture().sample(self.seed, c + dir * t));
                            depth.push(t);
                        }
                        None => {
                            albedo.push(0.0);
                            depth.push(f64::NAN);
                        }
                    }
                }
                (albedo, depth)
            })
            .collect();
        let (a, d): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let image = Image::gray(Grid::from_vec(w, h, a.concat())?);
        View::new(image, camera.clone(), Some(Grid::from_vec(w, h, d.concat())?))
    }

    /// Every rig view, reference first.
    pub fn render_views(&self) -> Result<Vec<View>> {
        self.validate()?;
        self.cameras()?.iter().map(|c| self.render_view(c)).collect()
    }

    /// Points on every bounded primitive at roughly `spacing` apart, coloured
    /// by albedo. Rectangles are sampled on a regular grid including their
    /// edges, spheres on a Fibonacci lattice; infinite planes are skipped.
    /// Occlusion is ignored.
    pub fn sample_surface(&self, spacing: f64) -> Result<PointCloud> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("surface spacing must be positive, got {spacing}")));
        }
        let mut points = Vec::new();
        let mut push = |tex: &Texture, p: Vector3<f64>| {
            let g = (tex.sample(self.seed, p).clamp(0.0, 1.0) * 255.0).round() as u8;
            points.push(Point {
                position: [p.x as f32, p.y as f32, p.z as f32],
                color: [g; 3],
            });
        };
        for prim in &self.primitives {
            match prim {
                Primitive::Plane { .. } => {}
                Primitive::Rectangle { center, u, v, texture } => {
                    let (c, u, v) = (v3(*center), v3(*u), v3(*v));
                    let nu = (2.0 * u.norm() / spacing).ceil() as usize;
                    let nv = (2.0 * v.norm() / spacing).ceil() as usize;
                    for j in 0..=nv {
                        let b = -1.0 + 2.0 * j as f64 / nv as f64;
                        for i in 0..=nu {
                            let a = -1.0 + 2.0 * i as f64 / nu as f64;
                            push(texture, c + u * a + v * b);
                        }
                    }
                }
                Primitive::Sphere { center, radius, texture } => {
                    let c = v3(*center);
                    let n = ((4.0 * std::f64::consts::PI * radius * radius) / (spacing * spacing)).ceil().max(1.0) as usize;
                    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                    for i in 0..n {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let phi = golden * i as f64;
                        push(texture, c + Vector3::new(r * phi.cos(), r * phi.sin(), z) * *radius);
                    }
                }
            }
        }
        Ok(PointCloud { points })
    }
}

/// Renders the scene with view 0 as reference and all others as sources.
pub fn render(spec: &SceneSpec) -> Result<SceneBundle> {
    let views = spec.render_views()?;
    if views.len() < 2 {
        return Err(Error::Scene("a bundle needs at least two cameras".into()));
    }
    let sources: Vec<usize> = (1..views.len()).collect();
    SceneBundle::from_views(&views, 0, &sources)
}

/// `1` where the reference pixel's ground-truth surface point is seen by
/// source `source` (its reprojected depth agrees with the source's ground
/// truth within 1 %), `0` otherwise. Pixels without ground truth are invalid.
pub fn occlusion_mask(bundle: &SceneBundle, source: usize) -> Result<SoftMask> {
    let reference = &bundle.reference;
    let src = bundle
        .sources
        .get(source)
        .ok_or_else(|| Error::Config(format!("source index {source} out of range")))?;
    let d_ref = reference.depth.as_ref().ok_or(Error::EmptyInput("reference ground truth"))?;
    let d_src = src.depth.as_ref().ok_or(Error::EmptyInput("source ground truth"))?;
    let (w, h) = (reference.width(), reference.height());
    let valid = d_ref.map(|&d| d.is_finite() && d > 0.0);
    let values = Grid::from_fn(w, h, |x, y| {
        let d = d_ref.at(x, y);
        if !(d.is_finite() && d > 0.0) {
            return 0.0;
        }
        let world = back_project(&reference.camera, PixelCoord::new(x as f64, y as f64), d);
        let z = src.camera.to_camera(&world).z;
        let Some(q) = src.camera.project_world(&world) else {
            return 0.0;
        };
        let (qx, qy) = (q.x.round(), q.y.round());
        if qx < 0.0 || qy < 0.0 || qx >= src.width() as f64 || qy >= src.height() as f64 {
            return 0.0;
        }
        let ds = d_src.at(qx as usize, qy as usize);
        if ds.is_finite() && ((z - ds) / ds).abs() < COVISIBILITY_TOLERANCE {
            1.0
        } else {
            0.0
        }
    });
    SoftMask::new(values, valid)
}

/// Ready-made specs used by tests, benchmarks and the command line.
pub mod presets {
    use super::*;

    fn noise(frequency: f64, seed: u64) -> Texture {
        Texture::Noise {
            frequency,
            octaves: 3,
            gain: 0.5,
            seed,
        }
    }

    /// Fronto-parallel textured square at depth 1 seen by five parallel
    /// cameras on a line; the square lies inside every view.
    pub fn plane(size: usize) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            focal: Some(2.0 * size as f64),
            seed: 1,
            rig: Rig {
                count: 5,
                layout: Layout::Line,
                baseline: 0.02,
                look_at: None,
            },
            primitives: vec![Primitive::Rectangle {
                center: [0.0, 0.0, 1.0],
                u: [0.15, 0.0, 0.0],
                v: [0.0, 0.15, 0.0],
                texture: noise(40.0, 0),
            }],
            depth_range: Some([0.5, 2.0]),
        }
    }

    /// A textured square at depth 1 in front of a textured wall at depth 2.
    /// The square hides parts of the wall from some sources that the
    /// reference sees.
    pub fn occlusion(size: usize, sources: usize) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            focal: Some(size as f64),
            seed: 7,
            rig: Rig {
                count: sources + 1,
                layout: Layout::Ring,
                baseline: 0.1,
                look_at: None,
            },
            primitives: vec![
                Primitive::Rectangle {
                    center: [0.0, 0.0, 1.0],
                    u: [0.2, 0.0, 0.0],
                    v: [0.0, 0.2, 0.0],
                    texture: noise(24.0, 1),
                },
                Primitive::Plane {
                    point: [0.0, 0.0, 2.0],
                    normal: [0.0, 0.0, -1.0],
                    texture: noise(12.0, 2),
                },
            ],
            depth_range: Some([0.8, 2.5]),
        }
    }

    /// Slanted textured wall with a sphere in front, seen by a ring of
    /// cameras converging on the scene centre.
    pub fn textured(size: usize, sources: usize) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            focal: Some(size as f64),
            seed: 3,
            rig: Rig {
                count: sources + 1,
                layout: Layout::Ring,
                baseline: 0.1,
                look_at: Some(1.6),
            },
            primitives: vec![
                Primitive::Plane {
                    point: [0.0, 0.0, 1.8],
                    normal: [0.3, 0.1, -1.0],
                    texture: noise(10.0, 0),
                },
                Primitive::Sphere {
                    center: [0.1, 0.05, 1.3],
                    radius: 0.2,
                    texture: noise(20.0, 1),
                },
            ],
            depth_range: Some([0.9, 2.5]),
        }
    }
}
