//! Versioned JSON architecture documents.
//!
//! Two document kinds share the `format` tag: `spine-arch` describes a graph
//! block by block, `spine-recipe` derives a graph from another document by a
//! scaling or mobile transform. Canonical output sorts object keys and lists
//! blocks by ordering and edges by (child, parent) ordering, so re-exporting
//! an imported document is byte-identical.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    AlphaBase, BackboneGraph, BlockId, BlockKind, BlockSpec, Decoder, Edge, EdgeKind, EntryLayers,
    FeatureLevel, MbConvParams, ResampleRegime,
};
use crate::error::{Error, Result};
use crate::resample::{plan_for_edge, ResampleConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format")]
pub enum SpecFile {
    #[serde(rename = "spine-arch")]
    Arch(ArchDocument),
    #[serde(rename = "spine-recipe")]
    Recipe(RecipeDocument),
}

impl SpecFile {
    pub fn name(&self) -> &str {
        match self {
            SpecFile::Arch(a) => &a.name,
            SpecFile::Recipe(r) => &r.name,
        }
    }

    pub fn version(&self) -> u32 {
        match self {
            SpecFile::Arch(a) => a.version,
            SpecFile::Recipe(r) => r.version,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemRecord {
    pub id: u32,
    pub ordering: u32,
    pub level: u8,
    #[serde(rename = "type")]
    pub kind: BlockKind,
    pub width: u32,
    #[serde(default = "one")]
    pub repeat: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub id: u32,
    pub ordering: u32,
    pub level: u8,
    #[serde(rename = "type")]
    pub kind: BlockKind,
    pub width: u32,
    #[serde(default = "one")]
    pub repeat: u32,
    #[serde(default)]
    pub is_output: bool,
}

fn one() -> u32 {
    1
}

fn default_regime() -> ResampleRegime {
    ResampleRegime::Dense
}

fn default_alpha_base() -> AlphaBase {
    AlphaBase::Parent
}

fn default_decoder() -> Decoder {
    Decoder::OutputProjections
}

/// One resample stage in a plan annotation (export only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_ch: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_ch: Option<u32>,
    /// Level of the feature map after this stage.
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub parent: u32,
    pub child: u32,
    pub kind: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDocument {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub entry: EntryLayers,
    pub stem: Vec<StemRecord>,
    #[serde(default)]
    pub blocks: Vec<BlockRecord>,
    #[serde(default)]
    pub edges: Vec<[u32; 2]>,
    #[serde(default)]
    pub orphan_edges: Vec<[u32; 2]>,
    #[serde(default)]
    pub uncertain_edges: Vec<[u32; 2]>,
    pub alpha: f64,
    #[serde(default = "default_alpha_base")]
    pub alpha_base: AlphaBase,
    #[serde(default = "default_regime")]
    pub resample_regime: ResampleRegime,
    pub output_dim: u32,
    #[serde(default = "default_decoder")]
    pub decoder: Decoder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbconv: Option<MbConvParams>,
    /// Resample plans, written on request and ignored on import.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<PlanRecord>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeDocument {
    pub version: u32,
    pub name: String,
    pub base: String,
    pub transform: Transform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Block repeat, uniform width scaling and a new alpha.
    Scale {
        repeat: u32,
        width_factor: f64,
        alpha: f64,
        output_dim: u32,
    },
    /// MBConv rebuild at the mobile per-level widths.
    Mobile { width_factor: f64, output_dim: u32 },
}

fn level(i: u8) -> Result<FeatureLevel> {
    FeatureLevel::new(i)
}

impl ArchDocument {
    pub fn into_graph(self) -> Result<BackboneGraph> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Load {
                name: self.name,
                detail: format!("unsupported version {}", self.version),
            });
        }
        let stem = self
            .stem
            .iter()
            .map(|s| {
                Ok(BlockSpec {
                    id: BlockId(s.id),
                    ordering: s.ordering,
                    level: level(s.level)?,
                    kind: s.kind,
                    width: s.width,
                    repeat: s.repeat,
                    is_output: false,
                    is_stem: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let permuted = self
            .blocks
            .iter()
            .map(|b| {
                Ok(BlockSpec {
                    id: BlockId(b.id),
                    ordering: b.ordering,
                    level: level(b.level)?,
                    kind: b.kind,
                    width: b.width,
                    repeat: b.repeat,
                    is_output: b.is_output,
                    is_stem: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|&[p, c]| Edge::connection(BlockId(p), BlockId(c)))
            .collect();
        edges.extend(
            self.orphan_edges
                .iter()
                .map(|&[p, c]| Edge::orphan(BlockId(p), BlockId(c))),
        );
        let uncertain: BTreeSet<(BlockId, BlockId)> = self
            .uncertain_edges
            .iter()
            .map(|&[p, c]| (BlockId(p), BlockId(c)))
            .collect();
        let mut g = BackboneGraph {
            name: self.name,
            entry: self.entry,
            stem,
            permuted,
            edges,
            uncertain,
            alpha: self.alpha,
            alpha_base: self.alpha_base,
            regime: self.resample_regime,
            output_dim: self.output_dim,
            decoder: self.decoder,
            mbconv: self.mbconv.unwrap_or_default(),
        };
        g.stem.sort_by_key(|b| b.ordering);
        g.permuted.sort_by_key(|b| b.ordering);
        Ok(g)
    }

    pub fn from_graph(g: &BackboneGraph) -> Self {
        let mut g = g.clone();
        g.stem.sort_by_key(|b| b.ordering);
        g.permuted.sort_by_key(|b| b.ordering);
        g.sort_edges();
        let pair = |e: &Edge| [e.parent.0, e.child.0];
        let has_mbconv = g.blocks().any(|b| b.kind == BlockKind::Mbconv);
        Self {
            version: FORMAT_VERSION,
            name: g.name.clone(),
            entry: g.entry,
            stem: g
                .stem
                .iter()
                .map(|b| StemRecord {
                    id: b.id.0,
                    ordering: b.ordering,
                    level: b.level.get(),
                    kind: b.kind,
                    width: b.width,
                    repeat: b.repeat,
                })
                .collect(),
            blocks: g
                .permuted
                .iter()
                .map(|b| BlockRecord {
                    id: b.id.0,
                    ordering: b.ordering,
                    level: b.level.get(),
                    kind: b.kind,
                    width: b.width,
                    repeat: b.repeat,
                    is_output: b.is_output,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::Connection)
                .map(pair)
                .collect(),
            orphan_edges: g
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::Orphan)
                .map(pair)
                .collect(),
            uncertain_edges: g
                .edges
                .iter()
                .filter(|e| g.is_uncertain(e.parent, e.child))
                .map(pair)
                .collect(),
            alpha: g.alpha,
            alpha_base: g.alpha_base,
            resample_regime: g.regime,
            output_dim: g.output_dim,
            decoder: g.decoder,
            mbconv: has_mbconv.then_some(g.mbconv),
            plans: None,
        }
    }
}

fn canonical(value: &impl Serialize) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap, so this sorts them.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

impl BackboneGraph {
    pub fn to_document(&self) -> ArchDocument {
        ArchDocument::from_graph(self)
    }

    /// Canonical JSON: sorted keys, blocks by ordering, edges by (child, parent).
    pub fn to_canonical_json(&self) -> Result<String> {
        canonical(&SpecFile::Arch(self.to_document()))
    }

    /// Canonical JSON with each edge's resample plan attached for inspection.
    pub fn to_canonical_json_with_plans(&self) -> Result<String> {
        let mut doc = self.to_document();
        let cfg = ResampleConfig::of(self);
        let index = self.index();
        let mut plans = Vec::new();
        let mut g = self.clone();
        g.sort_edges();
        for e in &g.edges {
            let (Some(p), Some(c)) = (index.get(&e.parent), index.get(&e.child)) else {
                continue;
            };
            let plan = plan_for_edge(p, c, e.kind, &cfg)?;
            plans.push(PlanRecord {
                parent: e.parent.0,
                child: e.child.0,
                kind: match e.kind {
                    EdgeKind::Connection => "connection".into(),
                    EdgeKind::Orphan => "orphan".into(),
                },
                stages: plan.stage_records(),
            });
        }
        doc.plans = Some(plans);
        canonical(&SpecFile::Arch(doc))
    }

    /// Parses a `spine-arch` document. Recipes need a model source to resolve
    /// their base and go through [`crate::zoo`].
    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str::<SpecFile>(text)? {
            SpecFile::Arch(doc) => doc.into_graph(),
            SpecFile::Recipe(r) => Err(Error::Load {
                name: r.name,
                detail: "recipe documents must be resolved through the model zoo".into(),
            }),
        }
    }
}
