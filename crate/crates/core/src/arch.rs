//! Backbone and classifier-head builders.
//!
//! The trainable artifacts are desk-scale "mini" variants (a few blocks,
//! small channel counts scaled by a width multiplier). The full VGG-19 and
//! ResNet-34 layer inventories are available as shape-only plans for
//! structural checks; they are far too large to train here.

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, ModelGraph};
use crate::layers::{LayerSpec, Padding};
use crate::tensor::Element;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    VggMini,
    InceptionMini,
    XceptionMini,
    ResNetMini,
    VggNineteenShape,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vgg_mini" => Ok(Arch::VggMini),
            "inception_mini" => Ok(Arch::InceptionMini),
            "xception_mini" => Ok(Arch::XceptionMini),
            "resnet_mini" => Ok(Arch::ResNetMini),
            "vgg19_shape" => Ok(Arch::VggNineteenShape),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?}; expected vgg_mini | inception_mini | xception_mini | resnet_mini"
            ))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Arch::VggMini => "vgg_mini",
            Arch::InceptionMini => "inception_mini",
            Arch::XceptionMini => "xception_mini",
            Arch::ResNetMini => "resnet_mini",
            Arch::VggNineteenShape => "vgg19_shape",
        };
        f.write_str(s)
    }
}

/// Architecture family plus the knobs that fix every tensor shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneKind {
    pub arch: Arch,
    /// Channel width multiplier, >= 1.
    pub width: usize,
    /// Square input size; must be divisible by 2^(pool count) = 16 for minis.
    pub input_size: usize,
}

impl BackboneKind {
    pub fn new(arch: Arch, width: usize, input_size: usize) -> Result<Self> {
        if width < 1 {
            return Err(Error::Config("width multiplier must be >= 1".into()));
        }
        let kind = Self {
            arch,
            width,
            input_size,
        };
        if input_size % (1 << kind.pool_count()) != 0 {
            return Err(Error::Config(format!(
                "input size {input_size} not divisible by 2^{}",
                kind.pool_count()
            )));
        }
        Ok(kind)
    }

    pub fn pool_count(&self) -> u32 {
        match self.arch {
            Arch::VggNineteenShape => 5,
            _ => 4,
        }
    }
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_ch,
        out_ch,
        kernel,
        stride: 1,
        padding: Padding::Same,
    }
}

/// Per-sample output shape of every node, by symbolic propagation.
pub fn node_shapes(nodes: &[(LayerSpec, Vec<usize>)], batch_input: &[usize]) -> Result<Vec<Vec<usize>>> {
    use crate::layers::out_dim;
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
    for (spec, inputs) in nodes {
        let shape_of = |i: usize| -> &Vec<usize> { &shapes[i] };
        let shape = match spec {
            LayerSpec::Input { shape } => {
                let _ = batch_input;
                shape.clone()
            }
            LayerSpec::Conv2d {
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                let s = shape_of(inputs[0]);
                vec![
                    *out_ch,
                    out_dim(s[1], *kernel, *stride, *padding),
                    out_dim(s[2], *kernel, *stride, *padding),
                ]
            }
            LayerSpec::DepthwiseConv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let s = shape_of(inputs[0]);
                vec![
                    s[0],
                    out_dim(s[1], *kernel, *stride, *padding),
                    out_dim(s[2], *kernel, *stride, *padding),
                ]
            }
            LayerSpec::MaxPool {
                size,
                stride,
                padding,
            } => {
                let s = shape_of(inputs[0]);
                match padding {
                    Padding::Valid => vec![s[0], s[1] / stride, s[2] / stride],
                    Padding::Same => vec![
                        s[0],
                        out_dim(s[1], *size, *stride, *padding),
                        out_dim(s[2], *size, *stride, *padding),
                    ],
                }
            }
            LayerSpec::BatchNorm { .. } | LayerSpec::Relu | LayerSpec::Softmax => {
                shape_of(inputs[0]).clone()
            }
            LayerSpec::Dense { out_dim, .. } => vec![*out_dim],
            LayerSpec::Flatten => vec![shape_of(inputs[0]).iter().product()],
            LayerSpec::Add => shape_of(inputs[0]).clone(),
            LayerSpec::Concat => {
                let mut s = shape_of(inputs[0]).clone();
                s[0] = inputs.iter().map(|&i| shapes[i][0]).sum();
                s
            }
        };
        shapes.push(shape);
    }
    Ok(shapes)
}

fn graph_shapes<E: Element>(g: &ModelGraph<E>) -> Result<Vec<Vec<usize>>> {
    let nodes: Vec<(LayerSpec, Vec<usize>)> = g
        .nodes
        .iter()
        .map(|n| (n.spec.clone(), n.inputs.clone()))
        .collect();
    node_shapes(&nodes, g.input_shape())
}

/// Four-branch block: 1x1, 1x1-3x3, 1x1-5x5, and pool-1x1, channel-concat.
/// Six convolutions and one (stride-1, same-padded) max pool.
///
/// `branch_channels = (c1, c2, c3, c4)` are the per-branch output widths; the
/// reduce convolutions use `c2 / 2` and `c3 / 2` (at least 1).
pub fn build_inception_block<E: Element, R: Rng>(
    b: &mut GraphBuilder<E, R>,
    prefix: &str,
    input: usize,
    in_ch: usize,
    branch_channels: (usize, usize, usize, usize),
) -> Result<usize> {
    let (c1, c2, c3, c4) = branch_channels;
    let (c2r, c3r) = ((c2 / 2).max(1), (c3 / 2).max(1));

    let b1 = b.add(format!("{prefix}.b1.conv1"), conv(in_ch, c1, 1), &[input])?;
    let b1 = b.add(format!("{prefix}.b1.relu"), LayerSpec::Relu, &[b1])?;

    let b2 = b.add(format!("{prefix}.b2.reduce"), conv(in_ch, c2r, 1), &[input])?;
    let b2 = b.add(format!("{prefix}.b2.relu0"), LayerSpec::Relu, &[b2])?;
    let b2 = b.add(format!("{prefix}.b2.conv3"), conv(c2r, c2, 3), &[b2])?;
    let b2 = b.add(format!("{prefix}.b2.relu1"), LayerSpec::Relu, &[b2])?;

    let b3 = b.add(format!("{prefix}.b3.reduce"), conv(in_ch, c3r, 1), &[input])?;
    let b3 = b.add(format!("{prefix}.b3.relu0"), LayerSpec::Relu, &[b3])?;
    let b3 = b.add(format!("{prefix}.b3.conv5"), conv(c3r, c3, 5), &[b3])?;
    let b3 = b.add(format!("{prefix}.b3.relu1"), LayerSpec::Relu, &[b3])?;

    let b4 = b.add(
        format!("{prefix}.b4.pool"),
        LayerSpec::MaxPool {
            size: 3,
            stride: 1,
            padding: Padding::Same,
        },
        &[input],
    )?;
    let b4 = b.add(format!("{prefix}.b4.conv1"), conv(in_ch, c4, 1), &[b4])?;
    let b4 = b.add(format!("{prefix}.b4.relu"), LayerSpec::Relu, &[b4])?;

    b.add(format!("{prefix}.concat"), LayerSpec::Concat, &[b1, b2, b3, b4])
}

/// Two depthwise-separable convolutions with a 1x1-projected shortcut added
/// to the stack output.
pub fn build_xception_block<E: Element, R: Rng>(
    b: &mut GraphBuilder<E, R>,
    prefix: &str,
    input: usize,
    in_ch: usize,
    out_ch: usize,
) -> Result<usize> {
    let dw = |ch: usize| LayerSpec::DepthwiseConv2d {
        channels: ch,
        kernel: 3,
        stride: 1,
        padding: Padding::Same,
    };

    let s = b.add(format!("{prefix}.sep0.dw"), dw(in_ch), &[input])?;
    let s = b.add(format!("{prefix}.sep0.pw"), conv(in_ch, out_ch, 1), &[s])?;
    let s = b.add(format!("{prefix}.relu"), LayerSpec::Relu, &[s])?;
    let s = b.add(format!("{prefix}.sep1.dw"), dw(out_ch), &[s])?;
    let s = b.add(format!("{prefix}.sep1.pw"), conv(out_ch, out_ch, 1), &[s])?;

    let short = b.add(format!("{prefix}.shortcut"), conv(in_ch, out_ch, 1), &[input])?;
    b.add(format!("{prefix}.add"), LayerSpec::Add, &[s, short])
}

/// Two 3x3 same-padded convolutions with a skip connection; the shortcut is
/// the identity when channel counts match and a 1x1 projection otherwise.
pub fn build_resnet_block<E: Element, R: Rng>(
    b: &mut GraphBuilder<E, R>,
    prefix: &str,
    input: usize,
    in_ch: usize,
    out_ch: usize,
) -> Result<usize> {
    let c = b.add(format!("{prefix}.conv0"), conv(in_ch, out_ch, 3), &[input])?;
    let c = b.add(format!("{prefix}.relu0"), LayerSpec::Relu, &[c])?;
    let c = b.add(format!("{prefix}.conv1"), conv(out_ch, out_ch, 3), &[c])?;

    let short = if in_ch == out_ch {
        input
    } else {
        b.add(format!("{prefix}.proj"), conv(in_ch, out_ch, 1), &[input])?
    };
    let sum = b.add(format!("{prefix}.add"), LayerSpec::Add, &[c, short])?;
    b.add(format!("{prefix}.relu1"), LayerSpec::Relu, &[sum])
}

fn build_backbone<E: Element, R: Rng>(
    b: &mut GraphBuilder<E, R>,
    kind: &BackboneKind,
    input: usize,
) -> Result<(usize, usize)> {
    let w = kind.width;
    let pool = |b: &mut GraphBuilder<E, R>, name: String, id: usize| {
        b.add(name, LayerSpec::max_pool_2x2(), &[id])
    };
    match kind.arch {
        Arch::VggMini => {
            let widths = [8 * w, 16 * w, 32 * w, 32 * w];
            let mut last = input;
            let mut in_ch = 3;
            for (i, &out_ch) in widths.iter().enumerate() {
                let c = b.add(
                    format!("backbone.stage{i}.conv"),
                    conv(in_ch, out_ch, 3),
                    &[last],
                )?;
                let r = b.add(format!("backbone.stage{i}.relu"), LayerSpec::Relu, &[c])?;
                last = pool(b, format!("backbone.stage{i}.pool"), r)?;
                in_ch = out_ch;
            }
            Ok((last, in_ch))
        }
        Arch::InceptionMini => {
            let stem = b.add("backbone.stem.conv", conv(3, 8 * w, 3), &[input])?;
            let stem = b.add("backbone.stem.relu", LayerSpec::Relu, &[stem])?;
            let mut last = pool(b, "backbone.stem.pool".into(), stem)?;
            last = build_inception_block(b, "backbone.block1", last, 8 * w, (4 * w, 8 * w, 2 * w, 2 * w))?;
            last = pool(b, "backbone.pool1".into(), last)?;
            last = build_inception_block(b, "backbone.block2", last, 16 * w, (8 * w, 16 * w, 4 * w, 4 * w))?;
            last = pool(b, "backbone.pool2".into(), last)?;
            let c = b.add("backbone.tail.conv", conv(32 * w, 32 * w, 3), &[last])?;
            let r = b.add("backbone.tail.relu", LayerSpec::Relu, &[c])?;
            last = pool(b, "backbone.tail.pool".into(), r)?;
            Ok((last, 32 * w))
        }
        Arch::XceptionMini => {
            let stem = b.add("backbone.stem.conv", conv(3, 8 * w, 3), &[input])?;
            let stem = b.add("backbone.stem.relu", LayerSpec::Relu, &[stem])?;
            let mut last = pool(b, "backbone.stem.pool".into(), stem)?;
            last = build_xception_block(b, "backbone.block1", last, 8 * w, 16 * w)?;
            last = pool(b, "backbone.pool1".into(), last)?;
            last = build_xception_block(b, "backbone.block2", last, 16 * w, 32 * w)?;
            last = pool(b, "backbone.pool2".into(), last)?;
            last = build_xception_block(b, "backbone.block3", last, 32 * w, 32 * w)?;
            last = pool(b, "backbone.pool3".into(), last)?;
            Ok((last, 32 * w))
        }
        Arch::ResNetMini => {
            let stem = b.add("backbone.stem.conv", conv(3, 8 * w, 3), &[input])?;
            let stem = b.add("backbone.stem.relu", LayerSpec::Relu, &[stem])?;
            let mut last = pool(b, "backbone.stem.pool".into(), stem)?;
            last = build_resnet_block(b, "backbone.block1", last, 8 * w, 16 * w)?;
            last = pool(b, "backbone.pool1".into(), last)?;
            last = build_resnet_block(b, "backbone.block2", last, 16 * w, 32 * w)?;
            last = pool(b, "backbone.pool2".into(), last)?;
            last = build_resnet_block(b, "backbone.block3", last, 32 * w, 32 * w)?;
            last = pool(b, "backbone.pool3".into(), last)?;
            Ok((last, 32 * w))
        }
        Arch::VggNineteenShape => Err(Error::Config(
            "vgg19_shape is a shape-only plan and cannot be trained; use plan_vgg19".into(),
        )),
    }
}

/// Complete trainable model: input batchnorm, backbone, then the classifier
/// head (1x1 conv to 128 channels, flatten, 512-unit dense, relu, K-way dense,
/// softmax).
pub fn build_model<E: Element, R: Rng>(
    kind: &BackboneKind,
    num_classes: usize,
    rng: &mut R,
) -> Result<ModelGraph<E>> {
    let mut b = GraphBuilder::new(rng);
    let input = b.add(
        "input",
        LayerSpec::Input {
            shape: vec![3, kind.input_size, kind.input_size],
        },
        &[],
    )?;
    let norm = b.add("backbone.input_norm", LayerSpec::batch_norm(3), &[input])?;
    let (last, out_ch) = build_backbone(&mut b, kind, norm)?;
    let feat = kind.input_size / (1 << kind.pool_count());
    attach_head(&mut b, last, out_ch, feat, num_classes)?;
    let g = b.finish_with_last()?;
    Ok(g)
}

fn attach_head<E: Element, R: Rng>(
    b: &mut GraphBuilder<E, R>,
    input: usize,
    in_ch: usize,
    feat: usize,
    num_classes: usize,
) -> Result<usize> {
    let c = b.add("head.conv1", conv(in_ch, 128, 1), &[input])?;
    let f = b.add("head.flatten", LayerSpec::Flatten, &[c])?;
    let d1 = b.add(
        "head.dense1",
        LayerSpec::Dense {
            in_dim: 128 * feat * feat,
            out_dim: 512,
        },
        &[f],
    )?;
    let r = b.add("head.relu", LayerSpec::Relu, &[d1])?;
    let d2 = b.add(
        "head.dense2",
        LayerSpec::Dense {
            in_dim: 512,
            out_dim: num_classes,
        },
        &[r],
    )?;
    b.add("head.softmax", LayerSpec::Softmax, &[d2])
}

/// Appends the classifier head to an arbitrary backbone graph whose output is
/// a 4-D feature map.
pub fn build_head<E: Element, R: Rng>(
    backbone: ModelGraph<E>,
    num_classes: usize,
    rng: &mut R,
) -> Result<ModelGraph<E>> {
    let shapes = graph_shapes(&backbone)?;
    let out_shape = &shapes[backbone.output];
    if out_shape.len() != 3 {
        return Err(Error::Graph(format!(
            "head requires a 4-D feature-map output, backbone emits per-sample {out_shape:?}"
        )));
    }
    if out_shape[1] != out_shape[2] {
        return Err(Error::Graph("head expects a square feature map".into()));
    }
    let (in_ch, feat) = (out_shape[0], out_shape[1]);
    let output = backbone.output;
    let mut b = GraphBuilder::from_graph(backbone, rng);
    attach_head(&mut b, output, in_ch, feat, num_classes)?;
    b.finish_with_last()
}

/// One line of a shape-only model plan.
#[derive(Clone, Debug)]
pub struct PlanEntry {
    pub name: String,
    pub spec: LayerSpec,
    /// Per-sample output shape.
    pub out_shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerInventory {
    pub conv: usize,
    pub pool: usize,
    pub dense: usize,
}

#[derive(Clone, Debug)]
pub struct ModelPlan {
    pub entries: Vec<PlanEntry>,
}

impl ModelPlan {
    pub fn inventory(&self) -> LayerInventory {
        let mut inv = LayerInventory::default();
        for e in &self.entries {
            match e.spec {
                LayerSpec::Conv2d { .. } => inv.conv += 1,
                LayerSpec::MaxPool { .. } => inv.pool += 1,
                LayerSpec::Dense { .. } => inv.dense += 1,
                _ => {}
            }
        }
        inv
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.entries.last().unwrap().out_shape
    }

    /// Shape right before the first flatten, if any.
    pub fn pre_flatten_shape(&self) -> Option<&[usize]> {
        let idx = self
            .entries
            .iter()
            .position(|e| matches!(e.spec, LayerSpec::Flatten))?;
        Some(&self.entries[idx - 1].out_shape)
    }
}

struct PlanBuilder {
    nodes: Vec<(LayerSpec, Vec<usize>)>,
    names: Vec<String>,
}

impl PlanBuilder {
    fn new(input_size: usize) -> Self {
        let mut p = Self {
            nodes: Vec::new(),
            names: Vec::new(),
        };
        p.push(
            "input",
            LayerSpec::Input {
                shape: vec![3, input_size, input_size],
            },
        );
        p
    }

    fn push(&mut self, name: impl Into<String>, spec: LayerSpec) -> usize {
        let prev = self.nodes.len().wrapping_sub(1);
        let inputs = if self.nodes.is_empty() { vec![] } else { vec![prev] };
        self.nodes.push((spec, inputs));
        self.names.push(name.into());
        self.nodes.len() - 1
    }

    fn finish(self) -> Result<ModelPlan> {
        let shapes = node_shapes(&self.nodes, &[])?;
        Ok(ModelPlan {
            entries: self
                .nodes
                .into_iter()
                .zip(self.names)
                .zip(shapes)
                .map(|(((spec, _), name), out_shape)| PlanEntry {
                    name,
                    spec,
                    out_shape,
                })
                .collect(),
        })
    }
}

/// Full VGG-19 inventory: 16 convolutions in five doubling stages separated
/// by five 2x2 pools, then three dense layers and a softmax.
pub fn plan_vgg19(input_size: usize, num_classes: usize) -> Result<ModelPlan> {
    if input_size % 32 != 0 {
        return Err(Error::Config(format!(
            "vgg19 input size must be divisible by 32, got {input_size}"
        )));
    }
    let mut p = PlanBuilder::new(input_size);
    let stages: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];
    let mut in_ch = 3;
    for (si, &(reps, ch)) in stages.iter().enumerate() {
        for ri in 0..reps {
            p.push(format!("stage{si}.conv{ri}"), conv(in_ch, ch, 3));
            p.push(format!("stage{si}.relu{ri}"), LayerSpec::Relu);
            in_ch = ch;
        }
        p.push(format!("stage{si}.pool"), LayerSpec::max_pool_2x2());
    }
    let feat = input_size / 32;
    p.push("flatten", LayerSpec::Flatten);
    p.push(
        "fc0",
        LayerSpec::Dense {
            in_dim: 512 * feat * feat,
            out_dim: 4096,
        },
    );
    p.push("fc0.relu", LayerSpec::Relu);
    p.push("fc1", LayerSpec::Dense { in_dim: 4096, out_dim: 4096 });
    p.push("fc1.relu", LayerSpec::Relu);
    p.push(
        "fc2",
        LayerSpec::Dense {
            in_dim: 4096,
            out_dim: num_classes,
        },
    );
    p.push("softmax", LayerSpec::Softmax);
    p.finish()
}

/// Shape-only 34-convolution residual inventory: seventeen two-convolution
/// blocks in four stages (4, 4, 6, 3 blocks at 64/128/256/512 channels),
/// parameter-free shortcuts, one max pool, one dense classifier.
pub fn plan_resnet34(input_size: usize, num_classes: usize) -> Result<ModelPlan> {
    let mut p = PlanBuilder::new(input_size);
    let stages: [(usize, usize); 4] = [(4, 64), (4, 128), (6, 256), (3, 512)];
    let mut in_ch = 3;
    for (si, &(blocks, ch)) in stages.iter().enumerate() {
        for bi in 0..blocks {
            // downsampling handled by the stage-entry stride-2 conv
            let stride = if bi == 0 { 2 } else { 1 };
            p.push(
                format!("stage{si}.block{bi}.conv0"),
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch: ch,
                    kernel: 3,
                    stride,
                    padding: Padding::Same,
                },
            );
            p.push(format!("stage{si}.block{bi}.relu0"), LayerSpec::Relu);
            p.push(format!("stage{si}.block{bi}.conv1"), conv(ch, ch, 3));
            p.push(format!("stage{si}.block{bi}.relu1"), LayerSpec::Relu);
            in_ch = ch;
        }
        if si == 0 {
            p.push("stage0.pool", LayerSpec::max_pool_2x2());
        }
    }
    p.push("flatten", LayerSpec::Flatten);
    let feat = input_size / 32;
    p.push(
        "fc",
        LayerSpec::Dense {
            in_dim: 512 * feat * feat,
            out_dim: num_classes,
        },
    );
    p.push("softmax", LayerSpec::Softmax);
    p.finish()
}
