//! Graph execution and the multi-level network built from the layer tables.

use std::collections::HashMap;

use super::graph::{all_graphs, dnet_graph, fpn_graph, wnet_graph, Graph, Manifest, Op, FEATURE_CHANNELS, LEVELS};
use super::ops::{self, ConvParams};
use super::weights::{Param, WeightStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::sampler::SampleGrid;

fn conv_params<'a>(store: &'a WeightStore, base: &str, bias: bool) -> Result<ConvParams<'a>> {
    let w = store.require(&format!("{base}.weight"))?;
    let shape: [usize; 4] = w.shape.as_slice().try_into().map_err(|_| Error::Layer {
        layer: base.into(),
        message: format!("weight rank {} (expected 4)", w.shape.len()),
    })?;
    let bias = if bias {
        Some(store.require(&format!("{base}.bias"))?.data.as_slice())
    } else {
        None
    };
    Ok(ConvParams {
        weight: &w.data,
        weight_shape: shape,
        bias,
    })
}

fn param<'a>(store: &'a WeightStore, name: &str) -> Result<&'a Param> {
    store.require(name)
}

/// Runs `graph` on named inputs. `grids[s]` is the epipolar sample grid of
/// internal scale `s`, used by deformable convolutions.
pub fn execute(
    graph: &Graph,
    store: &WeightStore,
    inputs: Vec<(&str, &Tensor)>,
    grids: &[&SampleGrid],
) -> Result<HashMap<String, Tensor>> {
    let mut values: HashMap<String, Tensor> = HashMap::new();
    for (name, expected) in &graph.inputs {
        let t = inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Layer {
                layer: graph.qualified(name),
                message: "input not provided".into(),
            })?;
        if t.channels() != *expected {
            return Err(Error::Layer {
                layer: graph.qualified(name),
                message: format!("expected {expected} channels, got {}", t.channels()),
            });
        }
        values.insert(name.clone(), t.clone());
    }

    for node in &graph.nodes {
        let layer = graph.qualified(&node.name);
        let wrap = |e: Error| match e {
            e @ Error::Layer { .. } => e,
            other => Error::Layer {
                layer: layer.clone(),
                message: other.to_string(),
            },
        };
        let ins: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|i| {
                values.get(i).ok_or_else(|| Error::Layer {
                    layer: layer.clone(),
                    message: format!("missing input '{i}'"),
                })
            })
            .collect::<Result<_>>()?;
        let out = match node.op {
            Op::Conv { stride, bias, act, .. } => {
                ops::conv2d(ins[0], conv_params(store, &layer, bias).map_err(wrap)?, stride, act)
            }
            Op::ConvNorm { stride, act, .. } => {
                let c = ops::conv2d(
                    ins[0],
                    conv_params(store, &layer, false).map_err(wrap)?,
                    stride,
                    ops::Activation::Identity,
                )
                .map_err(wrap)?;
                let scale = param(store, &format!("{layer}.norm.weight")).map_err(wrap)?;
                let shift = param(store, &format!("{layer}.norm.bias")).map_err(wrap)?;
                ops::instance_norm(&c, Some((&scale.data, &shift.data))).map(|t| ops::activate(&t, act))
            }
            Op::DeformConv { scale, bias, act, .. } => {
                let grid = grids.get(scale).ok_or_else(|| Error::Layer {
                    layer: layer.clone(),
                    message: format!("no sample grid for scale {scale}"),
                })?;
                ops::deformable_epipolar_conv(ins[0], grid, conv_params(store, &layer, bias).map_err(wrap)?, act)
            }
            Op::TransposedConv { stride, act, .. } => {
                ops::transposed_conv2d(ins[0], conv_params(store, &layer, false).map_err(wrap)?, stride, act)
            }
            Op::Concat => Tensor::concat(&ins),
            Op::Downscale(f) => {
                let (h, w) = (ins[0].height(), ins[0].width());
                if h % f != 0 || w % f != 0 {
                    return Err(Error::Layer {
                        layer,
                        message: format!("{w}×{h} is not divisible by {f}"),
                    });
                }
                ops::resize_bilinear(ins[0], h / f, w / f)
            }
            Op::Upscale2 => ops::resize_bilinear(ins[0], 2 * ins[0].height(), 2 * ins[0].width()),
            Op::UpsampleNearest2 => Ok(ops::upsample_nearest2(ins[0])),
            Op::Add => ops::add(ins[0], ins[1]),
        }
        .map_err(wrap)?;
        if out.channels() != node.stated_out && !matches!(node.op, Op::Concat | Op::Downscale(_) | Op::Upscale2 | Op::UpsampleNearest2 | Op::Add) {
            return Err(Error::Layer {
                layer,
                message: format!("produced {} channels, expected {}", out.channels(), node.stated_out),
            });
        }
        debug_assert!(out.all_finite(), "non-finite activation in {layer}");
        values.insert(node.name.clone(), out);
    }
    Ok(values)
}

/// Output of one decision- or weight-network level.
#[derive(Debug, Clone)]
pub struct LevelOutput {
    /// `b` (decision, in `(0, 1)`) or `w` (weight logit), 1 channel.
    pub map: Tensor,
    /// Features handed to the next level.
    pub features: Tensor,
}

/// Feature pyramid plus three decision and three weight levels sharing one
/// validated weight store.
#[derive(Debug, Clone)]
pub struct Network {
    store: WeightStore,
    fpn: Graph,
    dnet: Vec<Graph>,
    wnet: Vec<Graph>,
}

impl Network {
    pub fn new(store: WeightStore) -> Result<Self> {
        store.validate(&Manifest::for_graphs(&all_graphs())?)?;
        Ok(Self {
            store,
            fpn: fpn_graph(),
            dnet: (0..LEVELS).map(dnet_graph).collect(),
            wnet: (0..LEVELS).map(wnet_graph).collect(),
        })
    }

    pub fn store(&self) -> &WeightStore {
        &self.store
    }

    /// Features `(32, H/4, W/4)`, `(16, H/2, W/2)`, `(8, H, W)`.
    pub fn run_fpn(&self, image: &Tensor) -> Result<[Tensor; 3]> {
        if !image.height().is_multiple_of(4) || !image.width().is_multiple_of(4) {
            return Err(Error::Config(format!(
                "feature pyramid needs dimensions divisible by 4, got {}×{}",
                image.width(),
                image.height()
            )));
        }
        let mut out = execute(&self.fpn, &self.store, vec![("image", image)], &[])?;
        let take = |out: &mut HashMap<String, Tensor>, n: &str| {
            out.remove(n).ok_or_else(|| Error::Layer {
                layer: format!("fpn.{n}"),
                message: "missing output".into(),
            })
        };
        Ok([take(&mut out, "feat0")?, take(&mut out, "feat1")?, take(&mut out, "feat2")?])
    }

    /// Decision network of `level`. `grids` holds the sample grids at the
    /// level resolution, half and quarter of it.
    pub fn run_dnet_level(
        &self,
        level: usize,
        feat_r: &Tensor,
        feat_s: &Tensor,
        grids: [&SampleGrid; 3],
        fo_prev: Option<&Tensor>,
    ) -> Result<LevelOutput> {
        let graph = self.level_graph(&self.dnet, level)?;
        check_level_input(level, fo_prev.is_some(), &graph.prefix)?;
        let (h, w) = (feat_r.height(), feat_r.width());
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Layer {
                layer: graph.prefix.clone(),
                message: format!("level input {w}×{h} must be divisible by 4"),
            });
        }
        if feat_s.shape() != feat_r.shape() {
            return Err(Error::mismatch(format!("{} source features", graph.prefix), &feat_r.shape(), &feat_s.shape()));
        }
        for (s, g) in grids.iter().enumerate() {
            let f = 1 << s;
            if (g.width(), g.height()) != (w / f, h / f) {
                return Err(Error::mismatch(
                    format!("{} sample grid at scale {s}", graph.prefix),
                    &[w / f, h / f],
                    &[g.width(), g.height()],
                ));
            }
        }
        let mut inputs = vec![("feat_r", feat_r), ("feat_s", feat_s)];
        if let Some(fo) = fo_prev {
            if (fo.height(), fo.width()) != (h / 2, w / 2) {
                return Err(Error::mismatch(format!("{} previous features", graph.prefix), &[h / 2, w / 2], &[fo.height(), fo.width()]));
            }
            inputs.push(("fo_prev", fo));
        }
        let mut out = execute(graph, &self.store, inputs, &grids)?;
        Ok(LevelOutput {
            map: out.remove("b").expect("graph output"),
            features: out.remove("fo").expect("graph output"),
        })
    }

    /// Weight network of `level` on an entropy map.
    pub fn run_wnet_level(&self, level: usize, entropy: &Tensor, fo_prev: Option<&Tensor>) -> Result<LevelOutput> {
        let graph = self.level_graph(&self.wnet, level)?;
        check_level_input(level, fo_prev.is_some(), &graph.prefix)?;
        let mut inputs = vec![("entropy", entropy)];
        if let Some(fo) = fo_prev {
            if (2 * fo.height(), 2 * fo.width()) != (entropy.height(), entropy.width()) {
                return Err(Error::mismatch(
                    format!("{} previous features", graph.prefix),
                    &[entropy.height() / 2, entropy.width() / 2],
                    &[fo.height(), fo.width()],
                ));
            }
            inputs.push(("fo_prev", fo));
        }
        let mut out = execute(graph, &self.store, inputs, &[])?;
        Ok(LevelOutput {
            map: out.remove("w").expect("graph output"),
            features: out.remove("fo").expect("graph output"),
        })
    }

    fn level_graph<'a>(&self, graphs: &'a [Graph], level: usize) -> Result<&'a Graph> {
        graphs
            .get(level)
            .ok_or_else(|| Error::Config(format!("level {level} out of range 0..{LEVELS}")))
    }
}

fn check_level_input(level: usize, has_prev: bool, prefix: &str) -> Result<()> {
    if (level > 0) != has_prev {
        return Err(Error::Layer {
            layer: prefix.into(),
            message: if level > 0 {
                "previous-level features required".into()
            } else {
                "level 0 takes no previous-level features".into()
            },
        });
    }
    Ok(())
}

/// Three-channel tensor of an image; single-channel images are replicated.
pub fn image_tensor(image: &Image) -> Tensor {
    let (w, h) = (image.width(), image.height());
    Tensor::from_fn(3, h, w, |c, y, x| {
        let plane = image.plane(c.min(image.channels() - 1));
        plane.at(x, y) as f32
    })
}

/// Feature channels of each level.
pub fn level_channels(level: usize) -> usize {
    FEATURE_CHANNELS[level]
}
