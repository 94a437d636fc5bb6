//! File formats: PFM and raw depth maps, binary PGM/PPM images, camera
//! text files and the scene directory layout.
//!
//! Scene directory:
//!
//! ```text
//! manifest.json        {"views": N, "width": W, "height": H, "depth_range": [d_min, d_max]}
//! images/NNNN.ppm      8-bit binary PPM
//! cams/NNNN.txt        camera text format
//! depths/NNNN.pfm      ground-truth depth (optional, NaN = none)
//! gt_cloud.ply         ground-truth surface samples (optional)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Matrix3x4};
use serde::{Deserialize, Serialize};

use crate::cloud::{read_ply, write_ply, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::grid::{Grid, Image};
use crate::scene::View;

pub const DEPTH_MAGIC: &[u8; 4] = b"IBDM";

fn header_token(r: &mut impl BufRead, format: &'static str) -> Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return Err(Error::format(format, "unexpected end of header"));
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut comment = Vec::new();
                r.read_until(b'\n', &mut comment)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
    }
    String::from_utf8(token).map_err(|_| Error::format(format, "non-ASCII header"))
}

fn parse<T: std::str::FromStr>(s: &str, format: &'static str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format, format!("bad {what} '{s}'")))
}

fn ensure_consumed(r: &mut impl Read, format: &'static str) -> Result<()> {
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format(format, "trailing bytes"));
    }
    Ok(())
}

/// Single-channel little-endian PFM (scale `-1`), rows stored bottom to top.
pub fn write_pfm(grid: &Grid<f64>, mut w: impl Write) -> Result<()> {
    let (width, height) = grid.dims();
    write!(w, "Pf\n{width} {height}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(width * height * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            buf.write_f32::<LittleEndian>(grid.at(x, y) as f32)?;
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm(r: impl Read) -> Result<Grid<f64>> {
    const F: &str = "PFM";
    let mut r = BufReader::new(r);
    if header_token(&mut r, F)? != "Pf" {
        return Err(Error::format(F, "only single-channel 'Pf' is supported"));
    }
    let width: usize = parse(&header_token(&mut r, F)?, F, "width")?;
    let height: usize = parse(&header_token(&mut r, F)?, F, "height")?;
    let scale: f64 = parse(&header_token(&mut r, F)?, F, "scale")?;
    if scale >= 0.0 {
        return Err(Error::format(F, "big-endian PFM is not supported"));
    }
    let mut data = vec![0.0; width * height];
    for y in (0..height).rev() {
        for x in 0..width {
            data[y * width + x] = r.read_f32::<LittleEndian>().map_err(|_| Error::format(F, "truncated data"))? as f64;
        }
    }
    ensure_consumed(&mut r, F)?;
    Grid::from_vec(width, height, data)
}

/// Raw depth: magic `IBDM`, `u32` width, `u32` height, then row-major
/// little-endian `f32` values.
pub fn write_depth_raw(grid: &Grid<f64>, mut w: impl Write) -> Result<()> {
    w.write_all(DEPTH_MAGIC)?;
    w.write_u32::<LittleEndian>(grid.width() as u32)?;
    w.write_u32::<LittleEndian>(grid.height() as u32)?;
    let mut buf = Vec::with_capacity(grid.len() * 4);
    for v in grid.data() {
        buf.write_f32::<LittleEndian>(*v as f32)?;
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_depth_raw(mut r: impl Read) -> Result<Grid<f64>> {
    const F: &str = "IBDM";
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format(F, "missing magic"))?;
    if &magic != DEPTH_MAGIC {
        return Err(Error::format(F, "bad magic"));
    }
    let w = r.read_u32::<LittleEndian>().map_err(|_| Error::format(F, "truncated header"))? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(|_| Error::format(F, "truncated header"))? as usize;
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        data.push(r.read_f32::<LittleEndian>().map_err(|_| Error::format(F, "truncated data"))? as f64);
    }
    ensure_consumed(&mut r, F)?;
    Grid::from_vec(w, h, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary 8-bit image: PGM for one channel, PPM otherwise. Values in
/// `[0, 1]` are scaled to `0..=255`.
pub fn write_image(image: &Image, mut w: impl Write) -> Result<()> {
    let (width, height) = (image.width(), image.height());
    let channels = if image.channels() == 1 { 1 } else { 3 };
    let magic = if channels == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{width} {height}\n255\n")?;
    let mut buf = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                buf.push(quantize(image.plane(c.min(image.channels() - 1)).at(x, y)));
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes a PPM, replicating single-channel images into three channels.
pub fn write_ppm(image: &Image, w: impl Write) -> Result<()> {
    if image.channels() == 3 {
        return write_image(image, w);
    }
    let lum = image.luminance();
    write_image(&Image::new(vec![lum.clone(), lum.clone(), lum])?, w)
}

/// Reads binary PGM (`P5`) or PPM (`P6`) with `maxval ≤ 255`.
pub fn read_image(r: impl Read) -> Result<Image> {
    const F: &str = "PNM";
    let mut r = BufReader::new(r);
    let channels = match header_token(&mut r, F)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(F, format!("unsupported magic '{other}'"))),
    };
    let width: usize = parse(&header_token(&mut r, F)?, F, "width")?;
    let height: usize = parse(&header_token(&mut r, F)?, F, "height")?;
    let maxval: u32 = parse(&header_token(&mut r, F)?, F, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(F, format!("unsupported maxval {maxval}")));
    }
    let mut buf = vec![0u8; width * height * channels];
    r.read_exact(&mut buf).map_err(|_| Error::format(F, "truncated pixel data"))?;
    ensure_consumed(&mut r, F)?;
    let planes = (0..channels)
        .map(|c| Grid::from_fn(width, height, |x, y| buf[(y * width + x) * channels + c] as f64 / maxval as f64))
        .collect();
    Image::new(planes)
}

/// Camera text format:
///
/// ```text
/// size W H
/// intrinsic
/// fx 0 cx
/// 0 fy cy
/// 0 0 1
/// extrinsic
/// r11 r12 r13 t1
/// r21 r22 r23 t2
/// r31 r32 r33 t3
/// ```
///
/// The extrinsic maps world to camera coordinates. Blank lines and lines
/// starting with `#` are ignored. Values are written in shortest
/// round-trip form.
pub fn write_camera(camera: &Camera, mut w: impl Write) -> Result<()> {
    writeln!(w, "size {} {}", camera.width(), camera.height())?;
    writeln!(w, "intrinsic")?;
    // adding 0.0 turns -0.0 into 0.0
    let k = camera.k().map(|v| v + 0.0);
    for r in 0..3 {
        writeln!(w, "{:?} {:?} {:?}", k[(r, 0)], k[(r, 1)], k[(r, 2)])?;
    }
    writeln!(w, "extrinsic")?;
    let rt = camera.rt().map(|v| v + 0.0);
    for r in 0..3 {
        writeln!(w, "{:?} {:?} {:?} {:?}", rt[(r, 0)], rt[(r, 1)], rt[(r, 2)], rt[(r, 3)])?;
    }
    Ok(())
}

pub fn read_camera(r: impl Read) -> Result<Camera> {
    const F: &str = "camera";
    let lines: Vec<String> = BufReader::new(r)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let row = |i: usize, n: usize| -> Result<Vec<f64>> {
        let l = lines.get(i).ok_or_else(|| Error::format(F, "unexpected end of file"))?;
        let v: Vec<f64> = l.split_whitespace().map(|t| parse(t, F, "number")).collect::<Result<_>>()?;
        if v.len() != n {
            return Err(Error::format(F, format!("line '{l}' needs {n} numbers")));
        }
        Ok(v)
    };
    let expect = |i: usize, word: &str| -> Result<()> {
        match lines.get(i) {
            Some(l) if l == word => Ok(()),
            other => Err(Error::format(F, format!("expected '{word}', found {other:?}"))),
        }
    };
    let size: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
    let (width, height) = match size.as_slice() {
        ["size", w, h] => (parse::<usize>(w, F, "width")?, parse::<usize>(h, F, "height")?),
        _ => return Err(Error::format(F, "first line must be 'size W H'")),
    };
    expect(1, "intrinsic")?;
    let mut k = Matrix3::zeros();
    for r in 0..3 {
        for (c, v) in row(2 + r, 3)?.into_iter().enumerate() {
            k[(r, c)] = v;
        }
    }
    expect(5, "extrinsic")?;
    let mut rt = Matrix3x4::zeros();
    for r in 0..3 {
        for (c, v) in row(6 + r, 4)?.into_iter().enumerate() {
            rt[(r, c)] = v;
        }
    }
    if lines.len() > 9 {
        return Err(Error::format(F, "trailing lines"));
    }
    Camera::from_rt(k, &rt, width, height)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub depth_range: Option<[f64; 2]>,
}

/// A scene directory loaded into memory.
#[derive(Debug, Clone)]
pub struct SceneDir {
    pub manifest: SceneManifest,
    pub views: Vec<View>,
    pub gt_cloud: Option<PointCloud>,
}

pub fn view_name(i: usize) -> String {
    format!("{i:04}")
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_pfm_file(grid: &Grid<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_pfm(grid, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_pfm_file(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    read_pfm(open(path.as_ref())?)
}

/// Writes every view (image, camera and ground-truth depth when present).
pub fn write_scene_dir(dir: impl AsRef<Path>, views: &[View], depth_range: Option<[f64; 2]>, gt_cloud: Option<&PointCloud>) -> Result<()> {
    let dir = dir.as_ref();
    let first = views.first().ok_or(Error::EmptyInput("views to write"))?;
    for sub in ["images", "cams", "depths"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let manifest = SceneManifest {
        views: views.len(),
        width: first.width(),
        height: first.height(),
        depth_range,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    for (i, v) in views.iter().enumerate() {
        let n = view_name(i);
        let mut w = create(&dir.join("images").join(format!("{n}.ppm")))?;
        write_ppm(&v.image, &mut w)?;
        w.flush()?;
        let mut w = create(&dir.join("cams").join(format!("{n}.txt")))?;
        write_camera(&v.camera, &mut w)?;
        w.flush()?;
        if let Some(d) = &v.depth {
            write_pfm_file(d, dir.join("depths").join(format!("{n}.pfm")))?;
        }
    }
    if let Some(c) = gt_cloud {
        write_ply(c, dir.join("gt_cloud.ply"))?;
    }
    Ok(())
}

pub fn read_scene_dir(dir: impl AsRef<Path>) -> Result<SceneDir> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join("manifest.json").display()))))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.views == 0 {
        return Err(Error::format("manifest", "no views"));
    }
    let mut views = Vec::with_capacity(manifest.views);
    for i in 0..manifest.views {
        let n = view_name(i);
        let image = read_image(open(&dir.join("images").join(format!("{n}.ppm")))?)?;
        let camera = read_camera(open(&dir.join("cams").join(format!("{n}.txt")))?)?;
        let depth_path = dir.join("depths").join(format!("{n}.pfm"));
        let depth = if depth_path.exists() { Some(read_pfm_file(&depth_path)?) } else { None };
        if (camera.width(), camera.height()) != (manifest.width, manifest.height) {
            return Err(Error::mismatch(format!("view {n} size"), &[manifest.width, manifest.height], &[camera.width(), camera.height()]));
        }
        views.push(View::new(image, camera, depth)?);
    }
    let ply = dir.join("gt_cloud.ply");
    let gt_cloud = if ply.exists() { Some(read_ply(&ply)?) } else { None };
    Ok(SceneDir { manifest, views, gt_cloud })
}

/// Path of the depth map inferred for view `i` inside an output directory.
pub fn depth_output_path(dir: impl AsRef<Path>, i: usize) -> PathBuf {
    dir.as_ref().join(format!("{}.pfm", view_name(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::intrinsics;
    use crate::rng::SplitMix64;
    use nalgebra::{Rotation3, Vector3};

    #[test]
    fn pfm_round_trip_and_layout() {
        let g = Grid::from_fn(3, 2, |x, y| if (x, y) == (2, 1) { f64::NAN } else { (y * 3 + x) as f64 + 0.5 });
        let mut buf = Vec::new();
        write_pfm(&g, &mut buf).unwrap();
        assert!(buf.starts_with(b"Pf\n3 2\n-1.0\n"));
        // first stored row is the bottom one
        let first = f32::from_le_bytes(buf[12..16].try_into().unwrap());
        assert_eq!(first, 3.5);
        let back = read_pfm(buf.as_slice()).unwrap();
        assert!(back.at(2, 1).is_nan());
        assert_eq!(back.at(1, 0), 1.5);
        assert!(read_pfm(&buf[..buf.len() - 2]).is_err());
        assert!(read_pfm(&b"PF\n1 1\n-1.0\n"[..]).is_err());
        assert!(read_pfm(&b"Pf\n1 1\n1.0\n\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn raw_depth_round_trip() {
        let g = Grid::from_fn(4, 3, |x, y| x as f64 * 0.25 - y as f64);
        let mut buf = Vec::new();
        write_depth_raw(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], DEPTH_MAGIC);
        assert_eq!(buf.len(), 12 + 4 * 12);
        assert_eq!(read_depth_raw(buf.as_slice()).unwrap(), g);
        assert!(read_depth_raw(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn image_round_trip() {
        let mut rng = SplitMix64::new(1);
        let g = Grid::from_fn(5, 4, |_, _| (rng.next_u64() % 256) as f64 / 255.0);
        let mut buf = Vec::new();
        write_image(&Image::gray(g.clone()), &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 4\n255\n"));
        let back = read_image(buf.as_slice()).unwrap();
        assert_eq!(back.plane(0), &g);

        let mut ppm = Vec::new();
        write_ppm(&Image::gray(g.clone()), &mut ppm).unwrap();
        let back = read_image(ppm.as_slice()).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in back.luminance().data().iter().zip(g.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let commented = b"P5\n# comment\n2 1\n255\n\x00\xff";
        assert_eq!(read_image(&commented[..]).unwrap().plane(0).data(), &[0.0, 1.0]);
        assert!(read_image(&b"P5\n2 1\n255\n\x00"[..]).is_err());
    }

    #[test]
    fn camera_round_trip_is_exact() {
        let r = Rotation3::from_euler_angles(0.1, -0.3, 0.7).into_inner();
        let cam = Camera::new(intrinsics(500.3, 498.7, 319.5, 239.25), r, Vector3::new(0.1, -2.0, 3.3), 640, 480).unwrap();
        let mut buf = Vec::new();
        write_camera(&cam, &mut buf).unwrap();
        let back = read_camera(buf.as_slice()).unwrap();
        assert_eq!(back.k(), cam.k());
        assert_eq!(back.rt(), cam.rt());
        assert!(!String::from_utf8(buf).unwrap().contains("-0.0 "));
        assert_eq!((back.width(), back.height()), (640, 480));
    }

    #[test]
    fn camera_text_example() {
        let text = "# reference camera\nsize 64 48\nintrinsic\n64 0 31.5\n0 64 23.5\n0 0 1\n\nextrinsic\n1 0 0 -0.1\n0 1 0 0\n0 0 1 0\n";
        let cam = read_camera(text.as_bytes()).unwrap();
        assert_eq!(cam.center(), Vector3::new(0.1, 0.0, 0.0));
        assert!(read_camera(&text.as_bytes()[..text.len() - 8]).is_err());
        assert!(read_camera(text.replace("intrinsic", "intrinsics").as_bytes()).is_err());
    }

    #[test]
    fn scene_dir_round_trip() {
        let spec = crate::scenegen::presets::plane(16);
        let views = spec.render_views().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene_dir(dir.path(), &views, spec.depth_range, None).unwrap();
        let back = read_scene_dir(dir.path()).unwrap();
        assert_eq!(back.views.len(), 5);
        assert_eq!(back.manifest.depth_range, Some([0.5, 2.0]));
        for (a, b) in views.iter().zip(&back.views) {
            assert_eq!(a.camera.rt(), b.camera.rt());
            let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
            for (x, y) in da.data().iter().zip(db.data()) {
                assert!(x.is_nan() && y.is_nan() || (*x as f32) as f64 == *y);
            }
        }
        assert!(read_scene_dir(dir.path().join("missing")).is_err());
    }
}
