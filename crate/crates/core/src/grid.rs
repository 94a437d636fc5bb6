//! Dense row-major 2D maps and multi-channel images.

use crate::error::{Error, Result};

/// A `width × height` row-major map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::mismatch("grid data", &[width * height], &[data.len()]));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, width: usize, height: usize, context: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::mismatch(context, &[width, height], &[self.width, self.height]));
        }
        Ok(())
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }
}

/// Multi-channel image stored as one plane per channel; values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<Grid<f64>>,
}

impl Image {
    pub fn new(planes: Vec<Grid<f64>>) -> Result<Self> {
        let first = planes.first().ok_or(Error::EmptyInput("image planes"))?;
        let (w, h) = first.dims();
        for p in &planes {
            p.ensure_dims(w, h, "image plane")?;
        }
        Ok(Self { planes })
    }

    pub fn gray(plane: Grid<f64>) -> Self {
        Self {
            planes: vec![plane],
        }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &Grid<f64> {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Grid<f64>] {
        &self.planes
    }

    /// Channel mean.
    pub fn luminance(&self) -> Grid<f64> {
        if self.planes.len() == 1 {
            return self.planes[0].clone();
        }
        let n = self.planes.len() as f64;
        let mut out = Grid::filled(self.width(), self.height(), 0.0);
        for p in &self.planes {
            for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
                *o += v;
            }
        }
        for o in out.data_mut() {
            *o /= n;
        }
        out
    }

    /// Applies `f` to every sample of every channel.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            planes: self.planes.iter().map(|p| p.map(|&v| f(v))).collect(),
        }
    }
}

/// Bilinear resize of a scalar map with align-corners-false sampling
/// (output pixel `o` reads `max((o + 0.5)·in/out − 0.5, 0)`).
pub fn resize_bilinear(src: &Grid<f64>, out_w: usize, out_h: usize) -> Grid<f64> {
    let (w, h) = src.dims();
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        (i0, (i0 + 1).min(n_in - 1), src - i0 as f64)
    };
    Grid::from_fn(out_w, out_h, |x, y| {
        let (x0, x1, fx) = axis(x, w, out_w);
        let (y0, y1, fy) = axis(y, h, out_h);
        let top = src.at(x0, y0) * (1.0 - fx) + src.at(x1, y0) * fx;
        let bottom = src.at(x0, y1) * (1.0 - fx) + src.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}
