//! Fusion of per-view depth maps into one point cloud with
//! forward-backward geometric consistency, and binary PLY I/O.
//!
//! Views are visited in index order and pixels in row-major order. A pixel
//! `p` of view `a` with depth `d_a` is back-projected to `X` and projected
//! into every other view `b`, landing at pixel `q` (rounded). `q` is
//! back-projected with `d_b(q)` to `Y`, and `Y` is projected into `a`.
//! View `b` is consistent when that lands within `g` pixels of `p` and the
//! depth of `Y` in `a` is within 1 % of `d_a`. With at least `S_g`
//! consistent views, the mean of `X` and all consistent `Y` is emitted,
//! coloured from `a`, and `p` and every consistent `q` are marked used so
//! no later pixel re-emits them.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{back_project, PixelCoord};
use crate::grid::Grid;
use crate::scene::View;

/// Relative depth agreement required between the two directions.
pub const DEPTH_AGREEMENT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Consistent views required (`S_g`).
    pub min_views: usize,
    /// Reprojection threshold in pixels (`g`).
    pub max_reprojection: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            min_views: 3,
            max_reprojection: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_views < 1 {
            return Err(Error::Config("consistent view count must be at least 1".into()));
        }
        if !(self.max_reprojection > 0.0 && self.max_reprojection.is_finite()) {
            return Err(Error::Config("reprojection threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn from_positions(positions: impl IntoIterator<Item = [f32; 3]>) -> Self {
        Self {
            points: positions
                .into_iter()
                .map(|position| Point {
                    position,
                    color: [255; 3],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points
            .iter()
            .map(|p| Vector3::new(p.position[0] as f64, p.position[1] as f64, p.position[2] as f64))
    }
}

/// A view's camera with its estimated depth map (`NaN` = no estimate).
#[derive(Debug, Clone, Copy)]
pub struct DepthView<'a> {
    pub view: &'a View,
    pub depth: &'a Grid<f64>,
}

fn valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Forward-backward check of pixel `(x, y)` of `a` against `b`. Returns the
/// back-projected point of `b` when consistent.
pub fn check_pair(a: DepthView<'_>, x: usize, y: usize, b: DepthView<'_>, max_reprojection: f64) -> Option<Vector3<f64>> {
    match_pixel(a, x, y, b, max_reprojection).map(|(_, back)| back)
}

/// Like [`check_pair`], also returning the row-major index of the matched
/// pixel in `b`.
fn match_pixel(a: DepthView<'_>, x: usize, y: usize, b: DepthView<'_>, max_reprojection: f64) -> Option<(usize, Vector3<f64>)> {
    let d_a = a.depth.at(x, y);
    if !valid_depth(d_a) {
        return None;
    }
    let p = PixelCoord::new(x as f64, y as f64);
    let world = back_project(&a.view.camera, p, d_a);
    let q = b.view.camera.project_world(&world)?;
    let (qx, qy) = (q.x.round(), q.y.round());
    let (wb, hb) = b.depth.dims();
    if !(qx >= 0.0 && qy >= 0.0 && qx < wb as f64 && qy < hb as f64) {
        return None;
    }
    let d_b = b.depth.at(qx as usize, qy as usize);
    if !valid_depth(d_b) {
        return None;
    }
    let back = back_project(&b.view.camera, PixelCoord::new(qx, qy), d_b);
    let p2 = a.view.camera.project_world(&back)?;
    let reprojection = ((p2.x - p.x).powi(2) + (p2.y - p.y).powi(2)).sqrt();
    let depth = a.view.camera.to_camera(&back).z;
    let consistent = reprojection <= max_reprojection && ((depth - d_a) / d_a).abs() < DEPTH_AGREEMENT;
    consistent.then_some((qy as usize * wb + qx as usize, back))
}

/// Whether pixel `(x, y)` of `a` is geometrically consistent with `b`.
pub fn consistency_check(a: DepthView<'_>, x: usize, y: usize, b: DepthView<'_>, max_reprojection: f64) -> bool {
    check_pair(a, x, y, b, max_reprojection).is_some()
}

fn color_at(view: &View, x: usize, y: usize) -> [u8; 3] {
    let img = &view.image;
    let c = |i: usize| (img.plane(i.min(img.channels() - 1)).at(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(0), c(1), c(2)]
}

/// Fuses all views; see the module documentation for the rule.
pub fn fuse_cloud(views: &[DepthView<'_>], params: &FusionParams) -> Result<PointCloud> {
    params.validate()?;
    for v in views {
        v.depth.ensure_dims(v.view.width(), v.view.height(), "fused depth map")?;
    }
    let mut used: Vec<Grid<bool>> = views
        .iter()
        .map(|v| Grid::filled(v.view.width(), v.view.height(), false))
        .collect();
    let mut cloud = PointCloud::default();
    if views.len() < params.min_views + 1 {
        return Ok(cloud);
    }
    for (a, va) in views.iter().enumerate() {
        let (w, h) = va.depth.dims();
        // the checks are independent of the used marks, so they run in parallel
        let candidates: Vec<Vec<(usize, usize, Vector3<f64>)>> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                views
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .filter_map(|(b, vb)| {
                        let (j, back) = match_pixel(*va, x, y, *vb, params.max_reprojection)?;
                        Some((b, j, back))
                    })
                    .collect()
            })
            .collect();
        for (i, consistent) in candidates.into_iter().enumerate() {
            if used[a].data()[i] || consistent.len() < params.min_views {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let origin = back_project(&va.view.camera, PixelCoord::new(x as f64, y as f64), va.depth.at(x, y));
            let sum = consistent.iter().fold(origin, |acc, (_, _, p)| acc + p);
            let mean = sum / (consistent.len() + 1) as f64;
            cloud.points.push(Point {
                position: [mean.x as f32, mean.y as f32, mean.z as f32],
                color: color_at(va.view, x, y),
            });
            used[a].data_mut()[i] = true;
            for (b, j, _) in consistent {
                used[b].data_mut()[j] = true;
            }
        }
    }
    Ok(cloud)
}

const PLY_HEADER_END: &str = "end_header";

pub fn write_ply_to(cloud: &PointCloud, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n{PLY_HEADER_END}\n",
        cloud.len()
    )?;
    for p in &cloud.points {
        for c in p.position {
            w.write_f32::<LittleEndian>(c)?;
        }
        w.write_all(&p.color)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the layout written by [`write_ply_to`]: binary little-endian,
/// `float x, y, z` then `uchar red, green, blue`.
pub fn read_ply_from(r: impl Read) -> Result<PointCloud> {
    let bad = |m: &str| Error::format("PLY", m);
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(bad(&format!("unsupported format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["element", other, ..] => return Err(bad(&format!("unsupported element '{other}'"))),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            [PLY_HEADER_END] => break,
            _ => return Err(bad(&format!("unexpected header line '{l}'"))),
        }
    }
    let expected = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    if props.len() != expected.len() || props.iter().zip(expected).any(|((t, n), (et, en))| t != et || n != en) {
        return Err(bad("expected properties float x,y,z and uchar red,green,blue"));
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let mut points = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut position = [0f32; 3];
        for c in &mut position {
            *c = r.read_f32::<LittleEndian>().map_err(|_| bad("truncated vertex data"))?;
        }
        let mut color = [0u8; 3];
        r.read_exact(&mut color).map_err(|_| bad("truncated vertex data"))?;
        points.push(Point { position, color });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after vertex data"));
    }
    Ok(PointCloud { points })
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_ply_to(cloud, std::fs::File::create(path)?)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_ply_from(std::fs::File::open(path)?)
}
