//! Tensor operators. All convolutions use zero padding `(k - 1) / 2` and
//! PyTorch weight layouts: `[out, in, k, k]` for convolutions and
//! `[in, out, k, k]` for transposed convolutions.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::sampler::{gather, SampleGrid};

/// Negative slope of the leaky ReLU.
pub const LRELU_SLOPE: f32 = 0.01;
/// Variance epsilon of instance normalization.
pub const INSTANCE_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    LRELU_SLOPE * v
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

/// Borrowed convolution parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub weight: &'a [f32],
    pub weight_shape: [usize; 4],
    pub bias: Option<&'a [f32]>,
}

fn check_bias(bias: Option<&[f32]>, n: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != n {
            return Err(Error::mismatch("bias length", &[n], &[b.len()]));
        }
    }
    Ok(())
}

/// Standard cross-correlation with zero padding `(k - 1) / 2`.
pub fn conv2d(input: &Tensor, params: ConvParams<'_>, stride: usize, act: Activation) -> Result<Tensor> {
    let [c_out, c_in, k, k2] = params.weight_shape;
    if k != k2 || k % 2 == 0 {
        return Err(Error::Config(format!("conv kernel must be odd and square, got {k}×{k2}")));
    }
    if c_in != input.channels() {
        return Err(Error::mismatch("conv2d input channels", &[c_in], &[input.channels()]));
    }
    if params.weight.len() != c_out * c_in * k * k {
        return Err(Error::mismatch("conv2d weight", &[c_out * c_in * k * k], &[params.weight.len()]));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    check_bias(params.bias, c_out)?;
    let pad = (k / 2) as isize;
    let (h, w) = (input.height(), input.width());
    let out_h = (h + 2 * (k / 2) - k) / stride + 1;
    let out_w = (w + 2 * (k / 2) - k) / stride + 1;
    let plane = out_h * out_w;

    let mut out = Tensor::zeros(c_out, out_h, out_w);
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, dst)| {
            let b = params.bias.map_or(0.0, |b| b[o]);
            let wo = &params.weight[o * c_in * k * k..(o + 1) * c_in * k * k];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = b;
                    for c in 0..c_in {
                        let src = input.plane(c);
                        let wc = &wo[c * k * k..(c + 1) * k * k];
                        for ky in 0..k {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            for kx in 0..k {
                                let ix = (ox * stride) as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wc[ky * k + kx] * row[ix as usize];
                            }
                        }
                    }
                    dst[oy * out_w + ox] = act.apply(acc);
                }
            }
        });
    Ok(out)
}

/// Stride-2 transposed convolution with kernel 4 and padding 1: output is
/// exactly twice the input size. Weight layout `[in, out, k, k]`.
pub fn transposed_conv2d(input: &Tensor, params: ConvParams<'_>, stride: usize, act: Activation) -> Result<Tensor> {
    let [c_in, c_out, k, k2] = params.weight_shape;
    if k != k2 {
        return Err(Error::Config("transposed conv kernel must be square".into()));
    }
    if c_in != input.channels() {
        return Err(Error::mismatch("transposed conv input channels", &[c_in], &[input.channels()]));
    }
    if params.weight.len() != c_in * c_out * k * k {
        return Err(Error::mismatch("transposed conv weight", &[c_in * c_out * k * k], &[params.weight.len()]));
    }
    if stride == 0 || k < stride || !(k - stride).is_multiple_of(2) {
        return Err(Error::Config(format!("unsupported transposed conv k={k} stride={stride}")));
    }
    check_bias(params.bias, c_out)?;
    let pad = (k - stride) / 2;
    let (h, w) = (input.height(), input.width());
    let out_h = (h - 1) * stride + k - 2 * pad;
    let out_w = (w - 1) * stride + k - 2 * pad;
    let plane = out_h * out_w;

    let mut out = Tensor::zeros(c_out, out_h, out_w);
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, dst)| {
            let b = params.bias.map_or(0.0, |b| b[o]);
            // gather form: out[oy,ox] = Σ in[iy,ix] · w[ky,kx] with oy = iy·s + ky - pad
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = b;
                    for c in 0..c_in {
                        let src = input.plane(c);
                        let wc = &params.weight[(c * c_out + o) * k * k..(c * c_out + o + 1) * k * k];
                        for ky in 0..k {
                            let ny = oy as isize + pad as isize - ky as isize;
                            if ny < 0 || ny % stride as isize != 0 {
                                continue;
                            }
                            let iy = (ny / stride as isize) as usize;
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let nx = ox as isize + pad as isize - kx as isize;
                                if nx < 0 || nx % stride as isize != 0 {
                                    continue;
                                }
                                let ix = (nx / stride as isize) as usize;
                                if ix >= w {
                                    continue;
                                }
                                acc += src[iy * w + ix] * wc[ky * k + kx];
                            }
                        }
                    }
                    dst[oy * out_w + ox] = act.apply(acc);
                }
            }
        });
    Ok(out)
}

/// Per-channel `(x - mean) / sqrt(var + eps)` with biased variance, then the
/// optional affine `(scale, shift)`.
pub fn instance_norm(input: &Tensor, affine: Option<(&[f32], &[f32])>) -> Result<Tensor> {
    let c = input.channels();
    if let Some((s, b)) = affine {
        if s.len() != c || b.len() != c {
            return Err(Error::mismatch("instance norm affine", &[c, c], &[s.len(), b.len()]));
        }
    }
    let n = input.height() * input.width();
    if n == 0 {
        return Err(Error::EmptyInput("instance norm spatial size"));
    }
    let mut out = input.clone();
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(ch, plane)| {
            // statistics in f64 for stability on large planes
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS as f64).sqrt();
            let (s, b) = affine.map_or((1.0, 0.0), |(s, b)| (s[ch], b[ch]));
            for v in plane.iter_mut() {
                *v = ((*v as f64 - mean) * inv) as f32 * s + b;
            }
        });
    Ok(out)
}

/// Applies an activation elementwise.
pub fn activate(input: &Tensor, act: Activation) -> Tensor {
    input.map(|v| act.apply(v))
}

/// Bilinear resize with align-corners-false sampling: output pixel `o` reads
/// source coordinate `max((o + 0.5)·in/out − 0.5, 0)`.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = (input.height(), input.width());
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::EmptyInput("resize dimensions"));
    }
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let scale = n_in as f64 / n_out as f64;
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..out_w).map(|o| axis(o, w, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|o| axis(o, h, out_h)).collect();
    let mut out = Tensor::zeros(input.channels(), out_h, out_w);
    for c in 0..input.channels() {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample_nearest2(input: &Tensor) -> Tensor {
    let (h, w) = (input.height(), input.width());
    Tensor::from_fn(input.channels(), 2 * h, 2 * w, |c, y, x| input.at(c, y / 2, x / 2))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch("add", &a.shape(), &b.shape()));
    }
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// Convolution whose `k²` taps sit on the epipolar line described by `grid`.
///
/// Tap `i` of the `[out, in, k, k]` kernel (row-major `i = ky·k + kx`) reads
/// the `i`-th grid coordinate. Invalid taps contribute zero.
pub fn deformable_epipolar_conv(
    source: &Tensor,
    grid: &SampleGrid,
    params: ConvParams<'_>,
    act: Activation,
) -> Result<Tensor> {
    let [c_out, c_in, k, k2] = params.weight_shape;
    if k != k2 || k != grid.kernel().size() {
        return Err(Error::mismatch("deformable conv kernel vs grid", &[grid.kernel().size()], &[k, k2]));
    }
    if c_in != source.channels() {
        return Err(Error::mismatch("deformable conv input channels", &[c_in], &[source.channels()]));
    }
    if (source.width(), source.height()) != (grid.width(), grid.height()) {
        return Err(Error::mismatch(
            "deformable conv features vs grid",
            &[grid.width(), grid.height()],
            &[source.width(), source.height()],
        ));
    }
    check_bias(params.bias, c_out)?;
    let taps = k * k;
    let sampled = gather(source, grid)?;
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let mut out = Tensor::zeros(c_out, h, w);
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, dst)| {
            let b = params.bias.map_or(0.0, |b| b[o]);
            let wo = &params.weight[o * c_in * taps..(o + 1) * c_in * taps];
            for y in 0..h {
                for x in 0..w {
                    let v = sampled.pixel(x, y);
                    let acc = wo.iter().zip(v).fold(b, |acc, (a, b)| acc + a * b);
                    dst[y * w + x] = act.apply(acc);
                }
            }
        });
    Ok(out)
}
