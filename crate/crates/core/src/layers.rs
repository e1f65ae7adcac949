//! Lowering of a model into a flat layer program.
//!
//! The backbone and decoder become an executable [`Program`]: a list of nodes
//! over numbered values, each weighted node pointing at a [`LayerRecord`].
//! Head layers that do not run on the pyramid itself (RetinaNet subnets,
//! region branches) are listed as records only, with a multiplicity for
//! per-region layers. The record list is the per-layer inventory used to
//! cross-check the analytic cost counter.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::cost::se_width;
use crate::error::{Error, Result};
use crate::graph::{
    infer_shapes, BackboneGraph, BlockId, BlockKind, BlockSpec, Decoder, Edge, Shape, OUTPUT_LEVELS,
};
use crate::head::{HeadKind, ModelWithHead};
use crate::resample::{plan_for_edge, ResampleConfig, ResampleStage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPart {
    ClassNet,
    BoxNet,
    Rpn,
    BoxBranch,
    MaskBranch,
    Classifier,
}

/// Which part of the model a weighted layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Scope {
    Entry,
    Block { block: BlockId, copy: u32 },
    Resample { parent: BlockId, child: BlockId },
    Output { level: u8 },
    Fpn { level: u8 },
    Head { part: HeadPart },
}

/// Identity of one weight tensor; layers sharing a key share weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LayerKey {
    #[serde(flatten)]
    pub scope: Scope,
    pub index: u32,
}

impl LayerKey {
    pub fn new(scope: Scope, index: u32) -> Self {
        Self { scope, index }
    }
}

impl fmt::Display for LayerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Entry => write!(f, "entry")?,
            Scope::Block { block, copy } => write!(f, "block{}.{}", block.0, copy)?,
            Scope::Resample { parent, child } => write!(f, "resample{}-{}", parent.0, child.0)?,
            Scope::Output { level } => write!(f, "output{level}")?,
            Scope::Fpn { level } => write!(f, "fpn{level}")?,
            Scope::Head { part } => write!(f, "head.{part:?}")?,
        }
        write!(f, "/{}", self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerOp {
    Conv {
        k: u32,
        stride: u32,
        cin: u32,
        cout: u32,
        depthwise: bool,
        bn: bool,
        bias: bool,
    },
    /// Transposed conv; madds counted on the input grid.
    Deconv { k: u32, stride: u32, cin: u32, cout: u32, bias: bool },
    Fc { inputs: u32, outputs: u32, bias: bool },
}

impl LayerOp {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerOp::Conv {
                k, cin, cout, depthwise, ..
            } => {
                if depthwise {
                    (k * k * cin) as usize
                } else {
                    (k * k * cin) as usize * cout as usize
                }
            }
            LayerOp::Deconv { k, cin, cout, .. } => (k * k * cin) as usize * cout as usize,
            LayerOp::Fc { inputs, outputs, .. } => inputs as usize * outputs as usize,
        }
    }

    pub fn fan_in(&self) -> u32 {
        match *self {
            LayerOp::Conv { k, cin, depthwise, .. } => {
                if depthwise {
                    k * k
                } else {
                    k * k * cin
                }
            }
            LayerOp::Deconv { k, cin, .. } => k * k * cin,
            LayerOp::Fc { inputs, .. } => inputs,
        }
    }
}

/// One weighted layer application.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerRecord {
    pub key: LayerKey,
    #[serde(flatten)]
    pub op: LayerOp,
    pub input: Shape,
    pub output: Shape,
    /// Applications per image (regions for RoI branches).
    pub multiplicity: u64,
}

/// Nonlinearity after a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Act {
    None,
    /// ReLU, or swish when the executor is configured for it.
    Main,
    Sigmoid,
}

pub type ValueId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Instr {
    Input,
    /// Conv or FC; `layer` indexes [`Program::records`].
    Layer { layer: usize, input: ValueId, act: Act },
    MaxPool { input: ValueId, k: u32, stride: u32 },
    /// Nearest-neighbour resize to the node's shape.
    Resize { input: ValueId },
    Add { inputs: Vec<ValueId>, act: Act },
    Activate { input: ValueId, act: Act },
    GlobalPool { input: ValueId },
    /// Per-channel product of a map with a (1,1,C) gate.
    Gate { input: ValueId, gate: ValueId },
}

impl Instr {
    pub fn inputs(&self) -> Vec<ValueId> {
        match self {
            Instr::Input => vec![],
            Instr::Layer { input, .. }
            | Instr::MaxPool { input, .. }
            | Instr::Resize { input }
            | Instr::Activate { input, .. }
            | Instr::GlobalPool { input } => vec![*input],
            Instr::Add { inputs, .. } => inputs.clone(),
            Instr::Gate { input, gate } => vec![*input, *gate],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub instr: Instr,
    pub shape: Shape,
    /// Block whose computation this node belongs to (for error reports).
    pub owner: Option<BlockId>,
}

/// Lowered model. Value `i` is the output of `nodes[i]`; value 0 is the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub nodes: Vec<Node>,
    /// Weighted layers of the executable part.
    pub records: Vec<LayerRecord>,
    /// Head layers that are costed but not executed.
    pub head_records: Vec<LayerRecord>,
    pub block_outputs: BTreeMap<BlockId, ValueId>,
    /// P3..P7, empty for graphs without a pyramid.
    pub pyramid: BTreeMap<u8, ValueId>,
    /// Output of the last stem block (or last block in build order).
    pub final_feature: ValueId,
}

impl Program {
    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    /// Every weighted layer of the model, executable ones first.
    pub fn all_records(&self) -> impl Iterator<Item = &LayerRecord> {
        self.records.iter().chain(self.head_records.iter())
    }

    pub fn classifier_record(&self) -> Option<&LayerRecord> {
        self.head_records.iter().find(|r| {
            matches!(
                r.key.scope,
                Scope::Head {
                    part: HeadPart::Classifier
                }
            )
        })
    }
}

struct Builder {
    nodes: Vec<Node>,
    records: Vec<LayerRecord>,
    owner: Option<BlockId>,
}

#[derive(Clone, Copy)]
struct ConvArgs {
    k: u32,
    stride: u32,
    cout: u32,
    depthwise: bool,
    bn: bool,
    bias: bool,
    act: Act,
}

impl ConvArgs {
    fn bn(k: u32, stride: u32, cout: u32, act: Act) -> Self {
        Self {
            k,
            stride,
            cout,
            depthwise: false,
            bn: true,
            bias: false,
            act,
        }
    }

    fn biased(k: u32, stride: u32, cout: u32) -> Self {
        Self {
            bn: false,
            bias: true,
            ..Self::bn(k, stride, cout, Act::None)
        }
    }

    fn dw(k: u32, stride: u32, c: u32, act: Act) -> Self {
        Self {
            depthwise: true,
            ..Self::bn(k, stride, c, act)
        }
    }
}

impl Builder {
    fn push(&mut self, instr: Instr, shape: Shape) -> ValueId {
        self.nodes.push(Node {
            instr,
            shape,
            owner: self.owner,
        });
        self.nodes.len() - 1
    }

    fn shape(&self, v: ValueId) -> Shape {
        self.nodes[v].shape
    }

    /// Conv producing an `res x res` map.
    fn conv(&mut self, x: ValueId, key: LayerKey, a: ConvArgs, res: u32) -> ValueId {
        let input = self.shape(x);
        let cout = if a.depthwise { input.c } else { a.cout };
        let output = Shape::square(res, cout);
        self.records.push(LayerRecord {
            key,
            op: LayerOp::Conv {
                k: a.k,
                stride: a.stride,
                cin: input.c,
                cout,
                depthwise: a.depthwise,
                bn: a.bn,
                bias: a.bias,
            },
            input,
            output,
            multiplicity: 1,
        });
        let layer = self.records.len() - 1;
        self.push(Instr::Layer { layer, input: x, act: a.act }, output)
    }

    fn fc(&mut self, x: ValueId, key: LayerKey, outputs: u32, act: Act) -> ValueId {
        let input = self.shape(x);
        let output = Shape::square(1, outputs);
        self.records.push(LayerRecord {
            key,
            op: LayerOp::Fc {
                inputs: input.elements() as u32,
                outputs,
                bias: true,
            },
            input,
            output,
            multiplicity: 1,
        });
        let layer = self.records.len() - 1;
        self.push(Instr::Layer { layer, input: x, act }, output)
    }

    fn resize(&mut self, x: ValueId, res: u32) -> ValueId {
        let c = self.shape(x).c;
        self.push(Instr::Resize { input: x }, Shape::square(res, c))
    }

    fn maxpool(&mut self, x: ValueId, res: u32) -> ValueId {
        let c = self.shape(x).c;
        self.push(Instr::MaxPool { input: x, k: 3, stride: 2 }, Shape::square(res, c))
    }

    fn add(&mut self, inputs: Vec<ValueId>, act: Act) -> ValueId {
        let shape = self.shape(inputs[0]);
        self.push(Instr::Add { inputs, act }, shape)
    }

    /// One copy of a block: `x` at any resolution, output at `res`.
    fn block_copy(&mut self, b: &BlockSpec, g: &BackboneGraph, copy: u32, x: ValueId, res: u32, stride: u32) -> ValueId {
        let key = |i| LayerKey::new(Scope::Block { block: b.id, copy }, i);
        let cin = self.shape(x).c;
        let cout = b.io_channels();
        let w = b.width;
        let hin = self.shape(x).h;
        let shortcut = |this: &mut Self, idx| {
            if cin != cout || stride != 1 {
                this.conv(x, key(idx), ConvArgs::bn(1, stride, cout, Act::None), res)
            } else {
                x
            }
        };
        match b.kind {
            BlockKind::Bottleneck => {
                let a = self.conv(x, key(0), ConvArgs::bn(1, 1, w, Act::Main), hin);
                let a = self.conv(a, key(1), ConvArgs::bn(3, stride, w, Act::Main), res);
                let a = self.conv(a, key(2), ConvArgs::bn(1, 1, cout, Act::None), res);
                let s = shortcut(self, 3);
                self.add(vec![a, s], Act::Main)
            }
            BlockKind::Residual => {
                let a = self.conv(x, key(0), ConvArgs::bn(3, stride, w, Act::Main), res);
                let a = self.conv(a, key(1), ConvArgs::bn(3, 1, w, Act::None), res);
                let s = shortcut(self, 2);
                self.add(vec![a, s], Act::Main)
            }
            BlockKind::Mbconv => {
                let mb = g.mbconv;
                let e = cin * mb.expansion;
                let a = if mb.expansion > 1 {
                    self.conv(x, key(0), ConvArgs::bn(1, 1, e, Act::Main), hin)
                } else {
                    x
                };
                let a = self.conv(a, key(1), ConvArgs::dw(mb.kernel, stride, e, Act::Main), res);
                let pooled = self.push(Instr::GlobalPool { input: a }, Shape::square(1, e));
                let r = se_width(cin, mb.se_ratio);
                let s = self.fc(pooled, key(2), r, Act::Main);
                let s = self.fc(s, key(3), e, Act::Sigmoid);
                let a = self.push(Instr::Gate { input: a, gate: s }, Shape::square(res, e));
                let a = self.conv(a, key(4), ConvArgs::bn(1, 1, cout, Act::None), res);
                if stride == 1 && cin == cout {
                    self.add(vec![a, x], Act::None)
                } else {
                    a
                }
            }
        }
    }

    fn block_chain(&mut self, b: &BlockSpec, g: &BackboneGraph, x: ValueId, res: u32, stride: u32) -> ValueId {
        let mut y = self.block_copy(b, g, 0, x, res, stride);
        for copy in 1..b.repeat {
            y = self.block_copy(b, g, copy, y, res, 1);
        }
        y
    }
}

/// Per-image head records.
fn head_records(m: &ModelWithHead, r: u32) -> Vec<LayerRecord> {
    let Some(h) = &m.head else { return Vec::new() };
    let g = &m.graph;
    let od = g.output_dim;
    let mut out = Vec::new();
    let mut rec = |key: LayerKey, op: LayerOp, input: Shape, output: Shape, multiplicity: u64| {
        out.push(LayerRecord {
            key,
            op,
            input,
            output,
            multiplicity,
        })
    };
    let conv = |k, cin, cout, bn, bias| LayerOp::Conv {
        k,
        stride: 1,
        cin,
        cout,
        depthwise: false,
        bn,
        bias,
    };
    let dw = |c| LayerOp::Conv {
        k: 3,
        stride: 1,
        cin: c,
        cout: c,
        depthwise: true,
        bn: false,
        bias: false,
    };
    let head = |part, i| LayerKey::new(Scope::Head { part }, i);
    match h.kind {
        HeadKind::Retinanet => {
            for l in OUTPUT_LEVELS {
                let s = r >> l;
                for (part, outputs) in [
                    (HeadPart::ClassNet, h.anchors_per_location * h.num_classes),
                    (HeadPart::BoxNet, h.anchors_per_location * 4),
                ] {
                    let mut ci = od;
                    let mut idx = 0;
                    let mut layer = |rec: &mut dyn FnMut(LayerKey, LayerOp, Shape, Shape, u64), ci: u32, co: u32, last: bool| {
                        if h.separable {
                            rec(head(part, idx), dw(ci), Shape::square(s, ci), Shape::square(s, ci), 1);
                            rec(
                                head(part, idx + 1),
                                conv(1, ci, co, !last, last),
                                Shape::square(s, ci),
                                Shape::square(s, co),
                                1,
                            );
                            idx += 2;
                        } else {
                            rec(head(part, idx), conv(3, ci, co, !last, last), Shape::square(s, ci), Shape::square(s, co), 1);
                            idx += 1;
                        }
                    };
                    for _ in 0..h.shared_conv_layers {
                        layer(&mut rec, ci, h.head_width, false);
                        ci = h.head_width;
                    }
                    layer(&mut rec, ci, outputs, true);
                }
            }
        }
        HeadKind::Maskrcnn => {
            let nc = h.num_classes + 1;
            for l in OUTPUT_LEVELS {
                let s = r >> l;
                let sq = |c| Shape::square(s, c);
                rec(head(HeadPart::Rpn, 0), conv(3, od, h.rpn_width, false, true), sq(od), sq(h.rpn_width), 1);
                rec(head(HeadPart::Rpn, 1), conv(1, h.rpn_width, 3, false, true), sq(h.rpn_width), sq(3), 1);
                rec(head(HeadPart::Rpn, 2), conv(1, h.rpn_width, 12, false, true), sq(h.rpn_width), sq(12), 1);
            }
            let (b, p) = (h.box_roi_size, h.proposals as u64);
            let mut ci = od;
            for i in 0..4 {
                rec(head(HeadPart::BoxBranch, i), conv(3, ci, 256, true, false), Shape::square(b, ci), Shape::square(b, 256), p);
                ci = 256;
            }
            let fc = |inputs, outputs| LayerOp::Fc { inputs, outputs, bias: true };
            let flat = Shape::square(b, 256);
            let v = |c| Shape::square(1, c);
            rec(head(HeadPart::BoxBranch, 4), fc(b * b * 256, h.fc_width), flat, v(h.fc_width), p);
            rec(head(HeadPart::BoxBranch, 5), fc(h.fc_width, nc), v(h.fc_width), v(nc), p);
            rec(head(HeadPart::BoxBranch, 6), fc(h.fc_width, 4 * nc), v(h.fc_width), v(4 * nc), p);
            let (m, q) = (h.mask_roi_size, h.mask_rois as u64);
            ci = od;
            for i in 0..4 {
                rec(head(HeadPart::MaskBranch, i), conv(3, ci, 256, true, false), Shape::square(m, ci), Shape::square(m, 256), q);
                ci = 256;
            }
            rec(
                head(HeadPart::MaskBranch, 4),
                LayerOp::Deconv {
                    k: 2,
                    stride: 2,
                    cin: 256,
                    cout: 256,
                    bias: true,
                },
                Shape::square(m, 256),
                Shape::square(2 * m, 256),
                q,
            );
            rec(
                head(HeadPart::MaskBranch, 5),
                conv(1, 256, nc, false, true),
                Shape::square(2 * m, 256),
                Shape::square(2 * m, nc),
                q,
            );
        }
        HeadKind::Classifier | HeadKind::FinalFeatureClassifier => {
            let inputs = if h.kind == HeadKind::Classifier {
                od
            } else {
                g.stem.last().map(|b| b.io_channels()).unwrap_or(0)
            };
            rec(
                head(HeadPart::Classifier, 0),
                LayerOp::Fc {
                    inputs,
                    outputs: h.num_classes,
                    bias: true,
                },
                Shape::square(1, inputs),
                Shape::square(1, h.num_classes),
                1,
            );
        }
    }
    out
}

/// Lowers a model at a square input resolution.
pub fn lower(m: &ModelWithHead, resolution: u32) -> Result<Program> {
    let g = &m.graph;
    let shapes = infer_shapes(g, resolution)?;
    let r = resolution;
    let mut bld = Builder {
        nodes: Vec::new(),
        records: Vec::new(),
        owner: None,
    };
    let input = bld.push(Instr::Input, Shape::square(r, 3));
    let e = g.entry;
    let mut x = bld.conv(
        input,
        LayerKey::new(Scope::Entry, 0),
        ConvArgs::bn(e.kernel, e.stride, e.width, Act::Main),
        r >> 1,
    );
    if e.max_pool {
        x = bld.maxpool(x, r >> 2);
    }
    let mut block_outputs = BTreeMap::new();
    for (i, b) in g.stem.iter().enumerate() {
        bld.owner = Some(b.id);
        let res = shapes.blocks[&b.id].h;
        x = bld.block_chain(b, g, x, res, g.stem_stride(i));
        block_outputs.insert(b.id, x);
    }
    let cfg = ResampleConfig::of(g);
    let index = g.index();
    for b in &g.permuted {
        bld.owner = Some(b.id);
        let res = shapes.blocks[&b.id].h;
        // Canonical summation order, so results do not depend on edge storage.
        let mut incoming: Vec<Edge> = g.incoming(b.id).copied().collect();
        incoming.sort_by_key(|e| (e.kind, index[&e.parent].ordering));
        let mut inputs = Vec::with_capacity(incoming.len());
        for edge in incoming {
            let parent = index[&edge.parent];
            let mut v = *block_outputs.get(&parent.id).ok_or_else(|| Error::BadBlock {
                block: b.id,
                detail: format!("parent {} not built yet", parent.id),
            })?;
            let plan = plan_for_edge(parent, b, edge.kind, &cfg)?;
            let scope = Scope::Resample {
                parent: parent.id,
                child: b.id,
            };
            let mut level = parent.level.get();
            let mut idx = 0;
            for stage in &plan.stages {
                let key = LayerKey::new(scope, idx);
                match *stage {
                    ResampleStage::Proj1x1 { out_ch, .. } => {
                        v = bld.conv(v, key, ConvArgs::bn(1, 1, out_ch, Act::Main), r >> level);
                        idx += 1;
                    }
                    ResampleStage::ProjToTarget { out_ch, .. } => {
                        v = bld.conv(v, key, ConvArgs::bn(1, 1, out_ch, Act::None), r >> level);
                        idx += 1;
                    }
                    ResampleStage::Upsample { .. } => {
                        level = plan.target_level;
                        v = bld.resize(v, r >> level);
                    }
                    ResampleStage::Conv3x3Stride2 { out_ch, .. } => {
                        level += 1;
                        v = bld.conv(v, key, ConvArgs::bn(3, 2, out_ch, Act::Main), r >> level);
                        idx += 1;
                    }
                    ResampleStage::Depthwise3x3Stride2 { ch } => {
                        level += 1;
                        v = bld.conv(v, key, ConvArgs::dw(3, 2, ch, Act::Main), r >> level);
                        idx += 1;
                    }
                    ResampleStage::MaxPoolStride2 => {
                        level += 1;
                        v = bld.maxpool(v, r >> level);
                    }
                }
            }
            inputs.push(v);
        }
        if inputs.is_empty() {
            return Err(Error::BadBlock {
                block: b.id,
                detail: "no inputs".into(),
            });
        }
        let fused = bld.add(inputs, Act::Main);
        let y = bld.block_chain(b, g, fused, res, 1);
        block_outputs.insert(b.id, y);
    }
    bld.owner = None;
    let mut pyramid = BTreeMap::new();
    let od = g.output_dim;
    match g.decoder {
        Decoder::OutputProjections => {
            for l in OUTPUT_LEVELS {
                let b = g
                    .output_block(l)
                    .ok_or_else(|| Error::Head(format!("no output block at L{l}")))?;
                let v = bld.conv(
                    block_outputs[&b.id],
                    LayerKey::new(Scope::Output { level: l }, 0),
                    ConvArgs::bn(1, 1, od, Act::Main),
                    r >> l,
                );
                pyramid.insert(l, v);
            }
        }
        Decoder::Fpn => {
            let mut laterals = BTreeMap::new();
            for l in 3..=5u8 {
                let tap = g.stem_tap(l).ok_or_else(|| Error::Head(format!("no L{l} stem block for FPN")))?;
                let v = bld.conv(
                    block_outputs[&tap.id],
                    LayerKey::new(Scope::Fpn { level: l }, 0),
                    ConvArgs::biased(1, 1, od),
                    r >> l,
                );
                laterals.insert(l, v);
            }
            let mut td = laterals[&5];
            let mut merged = BTreeMap::from([(5u8, td)]);
            for l in [4u8, 3] {
                let up = bld.resize(td, r >> l);
                td = bld.add(vec![laterals[&l], up], Act::None);
                merged.insert(l, td);
            }
            for l in 3..=5u8 {
                let v = bld.conv(
                    merged[&l],
                    LayerKey::new(Scope::Fpn { level: l }, 1),
                    ConvArgs::biased(3, 1, od),
                    r >> l,
                );
                pyramid.insert(l, v);
            }
            let p6 = bld.conv(pyramid[&5], LayerKey::new(Scope::Fpn { level: 6 }, 0), ConvArgs::biased(3, 2, od), r >> 6);
            let p6a = bld.push(Instr::Activate { input: p6, act: Act::Main }, bld.shape(p6));
            let p7 = bld.conv(p6a, LayerKey::new(Scope::Fpn { level: 7 }, 0), ConvArgs::biased(3, 2, od), r >> 7);
            pyramid.insert(6, p6);
            pyramid.insert(7, p7);
        }
        Decoder::None => {}
    }
    let final_feature = g
        .stem
        .last()
        .map(|b| block_outputs[&b.id])
        .unwrap_or(input);
    // Shapes must agree with shape inference.
    for (id, v) in &block_outputs {
        let want = shapes.blocks[id];
        if bld.nodes[*v].shape != want {
            return Err(Error::ShapeMismatch(format!(
                "block {id} lowered to {}, expected {want}",
                bld.nodes[*v].shape
            )));
        }
    }
    Ok(Program {
        nodes: bld.nodes,
        records: bld.records,
        head_records: head_records(m, r),
        block_outputs,
        pyramid,
        final_feature,
    })
}


impl LayerRecord {
    pub fn madds(&self) -> u64 {
        let o = self.output;
        let hw = o.h as u64 * o.w as u64;
        match self.op {
            LayerOp::Conv {
                k, cin, cout, depthwise, ..
            } => {
                let per = (k * k) as u64 * if depthwise { cin as u64 } else { cin as u64 * cout as u64 };
                hw * per
            }
            LayerOp::Deconv { k, cin, cout, .. } => {
                self.input.h as u64 * self.input.w as u64 * (k * k) as u64 * cin as u64 * cout as u64
            }
            LayerOp::Fc { inputs, outputs, .. } => inputs as u64 * outputs as u64,
        }
    }

    pub fn params(&self) -> u64 {
        let w = self.op.weight_count() as u64;
        match self.op {
            LayerOp::Conv { cout, bn, bias, .. } => {
                w + if bn { 2 * cout as u64 } else { 0 } + if bias { cout as u64 } else { 0 }
            }
            LayerOp::Deconv { cout, bias, .. } => w + if bias { cout as u64 } else { 0 },
            LayerOp::Fc { outputs, bias, .. } => w + if bias { outputs as u64 } else { 0 },
        }
    }
}
