//! Layer tables of the feature pyramid, the decision network and the weight
//! network, with forward shape propagation.
//!
//! Each network is a list of named nodes evaluated in order. Channel counts
//! stated in the layer tables are kept alongside each node; propagation
//! derives the actual counts from the inputs, and every row whose stated
//! count disagrees is reported as a [`Discrepancy`] (the propagated value
//! wins).

use std::collections::HashMap;

use super::ops::Activation;
use crate::error::{Error, Result};

/// Feature channels of the pyramid levels (quarter, half, full resolution).
pub const FEATURE_CHANNELS: [usize; 3] = [32, 16, 8];
/// Number of resolution levels.
pub const LEVELS: usize = 3;
/// Epipolar kernel size of the deformable convolutions.
pub const EPIPOLAR_KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Convolution, padding `(k-1)/2`.
    Conv {
        k: usize,
        stride: usize,
        bias: bool,
        act: Activation,
    },
    /// Convolution without bias, then affine instance norm, then activation.
    ConvNorm { k: usize, stride: usize, act: Activation },
    /// Epipolar deformable convolution reading the grid of internal scale
    /// `scale` (0 = level resolution, 1 = half, 2 = quarter).
    DeformConv {
        k: usize,
        scale: usize,
        bias: bool,
        act: Activation,
    },
    /// Stride-2 transposed convolution, kernel 4, no bias.
    TransposedConv { k: usize, stride: usize, act: Activation },
    Concat,
    /// Bilinear downscale by an integer factor (align-corners false).
    Downscale(usize),
    /// Bilinear ×2 upscale (align-corners false).
    Upscale2,
    /// Nearest ×2 upscale.
    UpsampleNearest2,
    Add,
}

impl Op {
    fn has_params(&self) -> bool {
        matches!(
            self,
            Op::Conv { .. } | Op::ConvNorm { .. } | Op::DeformConv { .. } | Op::TransposedConv { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub inputs: Vec<String>,
    pub op: Op,
    /// Input channels as stated in the layer table.
    pub stated_in: usize,
    pub stated_out: usize,
}

/// A named network: external inputs, nodes in execution order, outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub prefix: String,
    pub inputs: Vec<(String, usize)>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

/// A trainable tensor expected by a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A layer-table row whose stated channel count disagrees with propagation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discrepancy {
    pub layer: String,
    pub field: &'static str,
    pub stated: usize,
    pub propagated: usize,
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: stated {} = {}, propagated {}",
            self.layer, self.field, self.stated, self.propagated
        )
    }
}

/// Result of shape propagation through a graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub channels: HashMap<String, usize>,
    /// Actual input channels per parametrized node.
    pub node_in: HashMap<String, usize>,
    pub params: Vec<ParamSpec>,
    pub discrepancies: Vec<Discrepancy>,
}

struct Builder {
    prefix: String,
    inputs: Vec<(String, usize)>,
    nodes: Vec<Node>,
}

impl Builder {
    fn new(prefix: String) -> Self {
        Self {
            prefix,
            inputs: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn input(&mut self, name: &str, channels: usize) -> &mut Self {
        self.inputs.push((name.into(), channels));
        self
    }

    fn node(&mut self, name: &str, inputs: &[&str], op: Op, stated_in: usize, stated_out: usize) -> &mut Self {
        self.nodes.push(Node {
            name: name.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            op,
            stated_in,
            stated_out,
        });
        self
    }

    fn conv(&mut self, name: &str, input: &str, cin: usize, cout: usize, stride: usize) -> &mut Self {
        let op = Op::Conv {
            k: 3,
            stride,
            bias: true,
            act: Activation::LeakyRelu,
        };
        self.node(name, &[input], op, cin, cout)
    }

    fn finish(&mut self, outputs: &[&str]) -> Graph {
        Graph {
            prefix: self.prefix.clone(),
            inputs: std::mem::take(&mut self.inputs),
            nodes: std::mem::take(&mut self.nodes),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Feature pyramid: three conv stages (full, half, quarter resolution) with
/// instance-normalized convolutions, followed by a top-down pathway with
/// nearest upsampling and lateral 1×1 convolutions. Outputs `feat0`
/// (32 ch, quarter), `feat1` (16 ch, half), `feat2` (8 ch, full).
pub fn fpn_graph() -> Graph {
    let relu = Activation::Relu;
    let cn = |k, stride| Op::ConvNorm { k, stride, act: relu };
    let plain = |k, bias| Op::Conv {
        k,
        stride: 1,
        bias,
        act: Activation::Identity,
    };
    let mut b = Builder::new("fpn".into());
    b.input("image", 3)
        .node("conv0_0", &["image"], cn(3, 1), 3, 8)
        .node("conv0_1", &["conv0_0"], cn(3, 1), 8, 8)
        .node("conv1_0", &["conv0_1"], cn(5, 2), 8, 16)
        .node("conv1_1", &["conv1_0"], cn(3, 1), 16, 16)
        .node("conv1_2", &["conv1_1"], cn(3, 1), 16, 16)
        .node("conv2_0", &["conv1_2"], cn(5, 2), 16, 32)
        .node("conv2_1", &["conv2_0"], cn(3, 1), 32, 32)
        .node("conv2_2", &["conv2_1"], cn(3, 1), 32, 32)
        .node("feat0", &["conv2_2"], plain(1, false), 32, 32)
        .node("up1", &["conv2_2"], Op::UpsampleNearest2, 32, 32)
        .node("inner1", &["conv1_2"], plain(1, true), 16, 32)
        .node("sum1", &["up1", "inner1"], Op::Add, 32, 32)
        .node("feat1", &["sum1"], plain(3, false), 32, 16)
        .node("up2", &["sum1"], Op::UpsampleNearest2, 32, 32)
        .node("inner2", &["conv0_1"], plain(1, true), 8, 32)
        .node("sum2", &["up2", "inner2"], Op::Add, 32, 32)
        .node("feat2", &["sum2"], plain(3, false), 32, 8)
        .finish(&["feat0", "feat1", "feat2"])
}

/// Decision network of level `level` (0 = quarter resolution).
///
/// Inputs: `feat_r`, `feat_s` (`F_l` channels at the level resolution) and,
/// for `level > 0`, `fo_prev` (`4·F_{l-1}` channels at half the level
/// resolution). Outputs: `b` (1 channel, sigmoid) and `fo` (`4·F_l`).
pub fn dnet_graph(level: usize) -> Graph {
    let f = FEATURE_CHANNELS[level];
    let lrelu = Activation::LeakyRelu;
    let dconv = |scale| Op::DeformConv {
        k: EPIPOLAR_KERNEL,
        scale,
        bias: true,
        act: lrelu,
    };
    let mut b = Builder::new(format!("dnet.l{level}"));
    b.input("feat_r", f).input("feat_s", f);
    if level > 0 {
        b.input("fo_prev", 4 * FEATURE_CHANNELS[level - 1]);
    }
    b.conv("conv1", "feat_r", f, f, 1)
        .node("dconv1", &["feat_s"], dconv(0), f, f)
        .node("conc1", &["conv1", "dconv1"], Op::Concat, 2 * f, 2 * f)
        .conv("conv2", "conc1", 2 * f, 2 * f, 1)
        .conv("sc1", "conv2", 2 * f, 2 * f, 2)
        .node("feat_r_half", &["feat_r"], Op::Downscale(2), f, f)
        .node("feat_s_half", &["feat_s"], Op::Downscale(2), f, f)
        .conv("conv3", "feat_r_half", f, f, 1)
        .node("dconv2", &["feat_s_half"], dconv(1), f, f)
        .node("conc2", &["conv3", "dconv2"], Op::Concat, 2 * f, 2 * f)
        .conv("conv4", "conc2", 2 * f, 2 * f, 1);
    if level == 0 {
        b.node("conc3", &["sc1", "conv4"], Op::Concat, 4 * f, 4 * f)
            .conv("conv5", "conc3", 4 * f, 4 * f, 1);
    } else {
        let fp = FEATURE_CHANNELS[level - 1];
        b.node("conc3", &["fo_prev", "sc1", "conv4"], Op::Concat, 4 * f + 4 * fp, 4 * f + 4 * fp)
            .conv("convpr", "conc3", 4 * f + 4 * fp, 4 * f, 1)
            .conv("conv5", "convpr", 4 * f, 4 * f, 1);
    }
    b.conv("sc2", "conv5", 4 * f, 4 * f, 2)
        .node("feat_r_quar", &["feat_r"], Op::Downscale(4), f, f)
        .node("feat_s_quar", &["feat_s"], Op::Downscale(4), f, f)
        .conv("conv6", "feat_r_quar", f, f, 1)
        .node("dconv3", &["feat_s_quar"], dconv(2), f, f)
        .node("conc4", &["conv6", "dconv3"], Op::Concat, 2 * f, 2 * f)
        .conv("conv7", "conc4", 2 * f, 2 * f, 1)
        .node("conc5", &["sc2", "conv7"], Op::Concat, 6 * f, 6 * f)
        .conv("conv8", "conc5", 6 * f, 6 * f, 1)
        .conv("conv9", "conv8", 6 * f, 6 * f, 1)
        .conv("conv10", "conv9", 6 * f, 6 * f, 1)
        .node(
            "uconv1",
            &["conv10"],
            Op::TransposedConv { k: 4, stride: 2, act: lrelu },
            6 * f,
            6 * f,
        )
        .node("conc6", &["conv5", "uconv1"], Op::Concat, 10 * f, 10 * f)
        .conv("conv11", "conc6", 10 * f, 4 * f, 1)
        .conv("conv12", "conv11", 4 * f, 4 * f, 1)
        .node(
            "uconv2",
            &["conv12"],
            Op::TransposedConv { k: 4, stride: 2, act: lrelu },
            4 * f,
            4 * f,
        )
        .node("conc7", &["conv2", "uconv2"], Op::Concat, 6 * f, 6 * f)
        .conv("fo", "conc7", 6 * f, 4 * f, 1)
        .node(
            "b",
            &["fo"],
            Op::Conv {
                k: 3,
                stride: 1,
                bias: false,
                act: Activation::Sigmoid,
            },
            4 * f,
            1,
        )
        .finish(&["b", "fo"])
}

/// Weight network of level `level`.
///
/// Inputs: `entropy` (1 channel) and, for `level > 0`, `fo_prev`
/// (`F_{l-1}/2` channels at half resolution). Outputs: `w` (1 channel,
/// unbounded logit) and `fo` (`F_l/2` channels).
pub fn wnet_graph(level: usize) -> Graph {
    let f = FEATURE_CHANNELS[level];
    let mut b = Builder::new(format!("wnet.l{level}"));
    b.input("entropy", 1);
    if level == 0 {
        b.conv("conv1", "entropy", 1, 2 * f, 1);
    } else {
        let fp = FEATURE_CHANNELS[level - 1];
        b.input("fo_prev", fp / 2)
            .conv("conv0", "entropy", 1, f, 1)
            .node("fo_up", &["fo_prev"], Op::Upscale2, fp / 2, fp / 2)
            .conv("convpr", "fo_up", fp / 2, f, 1)
            .node("conc1", &["conv0", "convpr"], Op::Concat, 2 * f, 2 * f)
            .conv("conv1", "conc1", 2 * f, 2 * f, 1);
    }
    b.conv("conv2", "conv1", 2 * f, 2 * f, 1)
        .conv("conv3", "conv2", 2 * f, f, 1)
        // the table lists 2F input channels here; conv3 produces F
        .conv("fo", "conv3", 2 * f, f / 2, 1)
        .node(
            "w",
            &["fo"],
            Op::Conv {
                k: 3,
                stride: 1,
                bias: false,
                act: Activation::Identity,
            },
            f / 2,
            1,
        )
        .finish(&["w", "fo"])
}

impl Graph {
    /// Walks the graph, deriving channel counts and parameter shapes.
    pub fn propagate(&self) -> Result<Propagation> {
        let mut channels: HashMap<String, usize> = self.inputs.iter().cloned().collect();
        let mut node_in = HashMap::new();
        let mut params = Vec::new();
        let mut discrepancies = Vec::new();
        for node in &self.nodes {
            let ins = node
                .inputs
                .iter()
                .map(|i| {
                    channels.get(i).copied().ok_or_else(|| Error::Layer {
                        layer: self.qualified(&node.name),
                        message: format!("unknown input '{i}'"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let total_in: usize = match node.op {
                Op::Add => ins[0],
                _ => ins.iter().sum(),
            };
            if node.op == Op::Add && ins.iter().any(|&c| c != ins[0]) {
                return Err(Error::Layer {
                    layer: self.qualified(&node.name),
                    message: format!("add of unequal channel counts {ins:?}"),
                });
            }
            if total_in != node.stated_in {
                discrepancies.push(Discrepancy {
                    layer: self.qualified(&node.name),
                    field: "input channels",
                    stated: node.stated_in,
                    propagated: total_in,
                });
            }
            let out = match node.op {
                Op::Concat | Op::Downscale(_) | Op::Upscale2 | Op::UpsampleNearest2 | Op::Add => total_in,
                _ => node.stated_out,
            };
            if out != node.stated_out {
                discrepancies.push(Discrepancy {
                    layer: self.qualified(&node.name),
                    field: "output channels",
                    stated: node.stated_out,
                    propagated: out,
                });
            }
            if node.op.has_params() {
                node_in.insert(node.name.clone(), total_in);
                let base = self.qualified(&node.name);
                match node.op {
                    Op::Conv { k, bias, .. } | Op::DeformConv { k, bias, .. } => {
                        params.push(ParamSpec {
                            name: format!("{base}.weight"),
                            shape: vec![out, total_in, k, k],
                        });
                        if bias {
                            params.push(ParamSpec {
                                name: format!("{base}.bias"),
                                shape: vec![out],
                            });
                        }
                    }
                    Op::ConvNorm { k, .. } => {
                        params.push(ParamSpec {
                            name: format!("{base}.weight"),
                            shape: vec![out, total_in, k, k],
                        });
                        params.push(ParamSpec {
                            name: format!("{base}.norm.weight"),
                            shape: vec![out],
                        });
                        params.push(ParamSpec {
                            name: format!("{base}.norm.bias"),
                            shape: vec![out],
                        });
                    }
                    Op::TransposedConv { k, .. } => params.push(ParamSpec {
                        name: format!("{base}.weight"),
                        shape: vec![total_in, out, k, k],
                    }),
                    _ => unreachable!(),
                }
            }
            channels.insert(node.name.clone(), out);
        }
        for o in &self.outputs {
            if !channels.contains_key(o) {
                return Err(Error::Layer {
                    layer: self.qualified(o),
                    message: "declared output is never produced".into(),
                });
            }
        }
        Ok(Propagation {
            channels,
            node_in,
            params,
            discrepancies,
        })
    }

    pub fn qualified(&self, node: &str) -> String {
        format!("{}.{}", self.prefix, node)
    }
}

/// Every graph of the full network, in manifest order.
pub fn all_graphs() -> Vec<Graph> {
    let mut g = vec![fpn_graph()];
    g.extend((0..LEVELS).map(dnet_graph));
    g.extend((0..LEVELS).map(wnet_graph));
    g
}

/// Expected tensors of the complete network plus layer-table discrepancies.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub params: Vec<ParamSpec>,
    pub discrepancies: Vec<Discrepancy>,
}

impl Manifest {
    pub fn full() -> Result<Self> {
        Self::for_graphs(&all_graphs())
    }

    pub fn for_graphs(graphs: &[Graph]) -> Result<Self> {
        let mut params = Vec::new();
        let mut discrepancies = Vec::new();
        for g in graphs {
            let p = g.propagate()?;
            params.extend(p.params);
            discrepancies.extend(p.discrepancies);
        }
        for d in &discrepancies {
            log::warn!("layer table discrepancy, using propagated shape: {d}");
        }
        Ok(Self {
            params,
            discrepancies,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// One line per tensor: `name dim0×dim1×…`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.params {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{} {}\n", p.name, dims.join("x")));
        }
        for d in &self.discrepancies {
            s.push_str(&format!("# discrepancy {d}\n"));
        }
        s
    }
}
