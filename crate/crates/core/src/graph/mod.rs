//! Block-level graph IR for scale-permuted backbones.
//!
//! A [`BackboneGraph`] is a fixed, scale-decreased stem (entry layers plus a
//! sequential chain of stem blocks) followed by a list of scale-permuted
//! blocks. Every scale-permuted block fuses two resampled parents chosen from
//! any block with a lower ordering. Five of the scale-permuted blocks are
//! output blocks, one per level L3..L7; a 1x1 projection on each produces the
//! pyramid P3..P7.
//!
//! Orderings are assigned at construction. Edges are only meaningful when the
//! parent's ordering is lower than the child's, which [`validate_graph`]
//! enforces, so a valid graph is acyclic by construction and its build order
//! is already a topological order.

mod dot;
mod json;
mod shape;
mod validate;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dot::to_dot;
pub use json::{
    ArchDocument, BlockRecord, PlanRecord, RecipeDocument, SpecFile, StageRecord, StemRecord, Transform, FORMAT_VERSION,
};
pub use shape::{infer_shapes, Shape, ShapeMap};
pub use validate::{validate_graph, validate_graph_with, ValidationMode, ValidationReport, Violation};

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 7;
/// Pyramid levels produced by output blocks.
pub const OUTPUT_LEVELS: [u8; 5] = [3, 4, 5, 6, 7];

/// Scale index `i`: a level-`i` block works at `1/2^i` of the input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FeatureLevel(u8);

impl FeatureLevel {
    pub fn new(i: u8) -> Result<Self> {
        if (MIN_LEVEL..=MAX_LEVEL).contains(&i) {
            Ok(Self(i))
        } else {
            Err(Error::LevelOutOfRange(i as i32))
        }
    }

    /// Clamps `i` into `lo..=hi` (both within 1..=7).
    pub fn clamped(i: i32, lo: u8, hi: u8) -> Self {
        Self(i.clamp(lo as i32, hi as i32) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Spatial size (per side) at this level for a square input.
    pub fn resolution(self, input: u32) -> u32 {
        input >> self.0
    }
}

impl TryFrom<u8> for FeatureLevel {
    type Error = Error;
    fn try_from(i: u8) -> Result<Self> {
        Self::new(i)
    }
}

impl From<FeatureLevel> for u8 {
    fn from(l: FeatureLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for FeatureLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Bottleneck,
    Residual,
    Mbconv,
}

impl BlockKind {
    /// Ratio of block input/output width (bottleneck, residual) or of the
    /// inner expansion (mbconv) to the block's `C`.
    pub fn expansion(self) -> u32 {
        match self {
            BlockKind::Bottleneck => 4,
            BlockKind::Residual => 1,
            BlockKind::Mbconv => 6,
        }
    }

    /// `C^in = C^out` for a block whose 3x3 width is `width`.
    pub fn io_channels(self, width: u32) -> u32 {
        match self {
            BlockKind::Bottleneck => 4 * width,
            BlockKind::Residual | BlockKind::Mbconv => width,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            BlockKind::Bottleneck => "bottleneck",
            BlockKind::Residual => "residual",
            BlockKind::Mbconv => "mbconv",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub id: BlockId,
    pub ordering: u32,
    pub level: FeatureLevel,
    pub kind: BlockKind,
    /// `C`, the width of the 3x3 convolution (the block width for mbconv).
    pub width: u32,
    /// Number of sequentially chained copies.
    pub repeat: u32,
    pub is_output: bool,
    pub is_stem: bool,
}

impl BlockSpec {
    pub fn io_channels(&self) -> u32 {
        self.kind.io_channels(self.width)
    }

    /// DOT / summary label, `L{i}/{type}/{C}`.
    pub fn label(&self) -> String {
        format!("L{}/{}/{}", self.level.get(), self.kind, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    /// One of the (up to) two resampled inputs of a block.
    Connection,
    /// Added by the orphan rule: a dangling intermediate feeding the output
    /// block at its level.
    Orphan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub parent: BlockId,
    pub child: BlockId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn connection(parent: BlockId, child: BlockId) -> Self {
        Self {
            parent,
            child,
            kind: EdgeKind::Connection,
        }
    }

    pub fn orphan(parent: BlockId, child: BlockId) -> Self {
        Self {
            parent,
            child,
            kind: EdgeKind::Orphan,
        }
    }
}

/// Layers in front of the stem blocks: a strided conv and an optional max-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryLayers {
    pub kernel: u32,
    pub stride: u32,
    pub width: u32,
    pub max_pool: bool,
}

impl EntryLayers {
    /// 7x7 stride-2 conv at width 64 followed by a stride-2 max-pool.
    pub fn resnet() -> Self {
        Self {
            kernel: 7,
            stride: 2,
            width: 64,
            max_pool: true,
        }
    }

    pub fn output_level(&self) -> u8 {
        1 + u8::from(self.max_pool)
    }
}

impl Default for EntryLayers {
    fn default() -> Self {
        Self::resnet()
    }
}

/// How the pyramid is produced from the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// 1x1 projection to `output_dim` on each of the five output blocks.
    OutputProjections,
    /// FPN over the last stem block of L3..L5, with P6/P7 by strided 3x3 convs.
    Fpn,
    /// No pyramid; the last stem block is the only feature output.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleRegime {
    /// alpha projection, strided 3x3 conv and max-pools, target projection.
    Dense,
    /// No alpha projection; depthwise stride-2 convs, target projection.
    Separable,
}

/// Which block's `C` the resampling width `alpha * C` is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaBase {
    Parent,
    Target,
}

/// Parameters of MBConv blocks shared across a graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbConvParams {
    pub expansion: u32,
    pub kernel: u32,
    /// Squeeze width as a fraction of the block's input channels.
    pub se_ratio: f64,
}

impl Default for MbConvParams {
    fn default() -> Self {
        Self {
            expansion: 6,
            kernel: 3,
            se_ratio: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneGraph {
    pub name: String,
    pub entry: EntryLayers,
    pub stem: Vec<BlockSpec>,
    pub permuted: Vec<BlockSpec>,
    pub edges: Vec<Edge>,
    /// Edges whose transcription is not certain.
    pub uncertain: BTreeSet<(BlockId, BlockId)>,
    pub alpha: f64,
    pub alpha_base: AlphaBase,
    pub regime: ResampleRegime,
    pub output_dim: u32,
    pub decoder: Decoder,
    pub mbconv: MbConvParams,
}

impl BackboneGraph {
    /// Empty scale-permuted graph with the default stem entry and settings.
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entry: EntryLayers::resnet(),
            stem: Vec::new(),
            permuted: Vec::new(),
            edges: Vec::new(),
            uncertain: BTreeSet::new(),
            alpha: 0.5,
            alpha_base: AlphaBase::Parent,
            regime: ResampleRegime::Dense,
            output_dim: 256,
            decoder: Decoder::OutputProjections,
            mbconv: MbConvParams::default(),
        }
    }

    /// Stem blocks followed by scale-permuted blocks, in build order.
    pub fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.stem.iter().chain(self.permuted.iter())
    }

    pub fn block_count(&self) -> usize {
        self.stem.len() + self.permuted.len()
    }

    /// Block count with every repeat chain expanded.
    pub fn expanded_block_count(&self) -> u64 {
        self.blocks().map(|b| b.repeat as u64).sum()
    }

    pub fn block(&self, id: BlockId) -> Option<&BlockSpec> {
        self.blocks().find(|b| b.id == id)
    }

    pub fn index(&self) -> HashMap<BlockId, &BlockSpec> {
        self.blocks().map(|b| (b.id, b)).collect()
    }

    pub fn incoming(&self, id: BlockId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.child == id)
    }

    pub fn outgoing(&self, id: BlockId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.parent == id)
    }

    /// Connection parents of `id`, in edge storage order.
    pub fn parents(&self, id: BlockId) -> Vec<BlockId> {
        self.incoming(id)
            .filter(|e| e.kind == EdgeKind::Connection)
            .map(|e| e.parent)
            .collect()
    }

    pub fn output_blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.permuted.iter().filter(|b| b.is_output)
    }

    pub fn output_block(&self, level: u8) -> Option<&BlockSpec> {
        self.output_blocks().find(|b| b.level.get() == level)
    }

    pub fn next_id(&self) -> BlockId {
        BlockId(self.blocks().map(|b| b.id.0 + 1).max().unwrap_or(0))
    }

    /// Last stem block at `level`, used as an FPN tap.
    pub fn stem_tap(&self, level: u8) -> Option<&BlockSpec> {
        self.stem.iter().rev().find(|b| b.level.get() == level)
    }

    /// Stride of stem block `i` relative to its predecessor (or the entry layers).
    pub fn stem_stride(&self, i: usize) -> u32 {
        let prev = if i == 0 {
            self.entry.output_level()
        } else {
            self.stem[i - 1].level.get()
        };
        let here = self.stem[i].level.get();
        1 << here.saturating_sub(prev)
    }

    /// Input channels of stem block `i`.
    pub fn stem_input_channels(&self, i: usize) -> u32 {
        if i == 0 {
            self.entry.width
        } else {
            self.stem[i - 1].io_channels()
        }
    }

    /// Checks the graph and returns it unchanged, or the full report.
    pub fn validated(self) -> Result<Self> {
        let report = validate_graph(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(report))
        }
    }

    pub fn is_uncertain(&self, parent: BlockId, child: BlockId) -> bool {
        self.uncertain.contains(&(parent, child))
    }

    /// Recomputes orphan edges: every intermediate without an outgoing edge
    /// gets one to the output block at its level.
    pub fn apply_orphan_rule(&mut self) -> Result<()> {
        self.edges.retain(|e| e.kind != EdgeKind::Orphan);
        let mut added = Vec::new();
        for b in self.permuted.iter().filter(|b| !b.is_output) {
            if self.outgoing(b.id).next().is_some() {
                continue;
            }
            let target = self
                .output_block(b.level.get())
                .filter(|o| o.ordering > b.ordering)
                .ok_or(Error::UnplaceableOrphan {
                    position: b.ordering as usize,
                    level: b.level.get(),
                })?;
            added.push(Edge::orphan(b.id, target.id));
        }
        self.edges.extend(added);
        Ok(())
    }

    /// Sorts edges by (child ordering, kind, parent ordering).
    pub fn sort_edges(&mut self) {
        let ord: HashMap<BlockId, u32> = self.blocks().map(|b| (b.id, b.ordering)).collect();
        let key = |e: &Edge| {
            (
                ord.get(&e.child).copied().unwrap_or(u32::MAX),
                e.kind,
                ord.get(&e.parent).copied().unwrap_or(u32::MAX),
            )
        };
        self.edges.sort_by_key(key);
    }
}

/// Blocks of a valid graph in build order; every edge goes forward.
pub fn topological_order(g: &BackboneGraph) -> Result<Vec<BlockId>> {
    let report = validate_graph_with(g, ValidationMode::Relaxed);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let mut blocks: Vec<&BlockSpec> = g.blocks().collect();
    blocks.sort_by_key(|b| b.ordering);
    Ok(blocks.into_iter().map(|b| b.id).collect())
}

/// Half-up rounding of `width * factor`, never below 1.
pub fn scale_width(width: u32, factor: f64) -> u32 {
    let scaled = (width as f64 * factor + 0.5).floor();
    (scaled as u32).max(1)
}
