//! Ablation constructions: fixed block orderings whose connections are still
//! searched, and graph damages that strip cross-scale connections.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{validate_graph_with, BackboneGraph, BlockId, Edge, EdgeKind, ValidationMode};
use crate::search::{Permutation, SearchSpaceConfig};

/// Hourglass: 3xL2 (two of them stem), 3xL3, 5xL4, L5, then outputs L7..L3.
pub const HOURGLASS_LEVELS: [u8; 17] = [2, 2, 2, 3, 3, 3, 4, 4, 4, 4, 4, 5, 7, 6, 5, 4, 3];
/// Fish: down to L5, back up to L2, then outputs L3..L7.
pub const FISH_LEVELS: [u8; 17] = [2, 2, 3, 3, 4, 4, 4, 5, 4, 4, 3, 2, 3, 4, 5, 6, 7];

/// Stem blocks at the front of each template.
const TEMPLATE_STEM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixedOrderingTemplate {
    Hourglass,
    Fish,
}

impl FixedOrderingTemplate {
    pub const ALL: [FixedOrderingTemplate; 2] = [FixedOrderingTemplate::Hourglass, FixedOrderingTemplate::Fish];

    pub fn name(self) -> &'static str {
        match self {
            FixedOrderingTemplate::Hourglass => "hourglass",
            FixedOrderingTemplate::Fish => "fish",
        }
    }

    /// Full level sequence, stem included.
    pub fn levels(self) -> &'static [u8] {
        match self {
            FixedOrderingTemplate::Hourglass => &HOURGLASS_LEVELS,
            FixedOrderingTemplate::Fish => &FISH_LEVELS,
        }
    }

    pub fn stem_levels(self) -> &'static [u8] {
        &self.levels()[..TEMPLATE_STEM]
    }
}

impl fmt::Display for FixedOrderingTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixedOrderingTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hourglass" => Ok(FixedOrderingTemplate::Hourglass),
            "fish" => Ok(FixedOrderingTemplate::Fish),
            other => Err(Error::SearchConfig(format!("unknown ordering template `{other}`"))),
        }
    }
}

/// The template's sampled blocks in build order.
pub fn build_fixed_ordering(t: FixedOrderingTemplate) -> Permutation {
    Permutation {
        levels: t.levels()[TEMPLATE_STEM..].to_vec(),
    }
}

/// Search space with the template's ordering fixed: only connections are
/// sampled.
pub fn fixed_ordering_space(t: FixedOrderingTemplate) -> SearchSpaceConfig {
    let perm = build_fixed_ordering(t);
    let mut cfg = SearchSpaceConfig::with_intermediates(perm.intermediates().to_vec());
    cfg.stem_levels = t.stem_levels().to_vec();
    cfg.output_order.copy_from_slice(perm.outputs());
    cfg.search_permutation = false;
    cfg.enable_adjustments = false;
    cfg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DamageMode {
    /// Drop the parent closer in the build order.
    RemoveShort,
    /// Drop the parent further away in the build order.
    RemoveLong,
    /// Drop both and connect the block to its immediate predecessor.
    Sequential,
}

impl DamageMode {
    pub const ALL: [DamageMode; 3] = [DamageMode::RemoveShort, DamageMode::RemoveLong, DamageMode::Sequential];

    pub fn name(self) -> &'static str {
        match self {
            DamageMode::RemoveShort => "remove_short",
            DamageMode::RemoveLong => "remove_long",
            DamageMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for DamageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DamageMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" | "remove_short" => Ok(DamageMode::RemoveShort),
            "long" | "remove_long" => Ok(DamageMode::RemoveLong),
            "sequential" => Ok(DamageMode::Sequential),
            other => Err(Error::SearchConfig(format!(
                "unknown damage mode `{other}` (expected short, long or sequential)"
            ))),
        }
    }
}

/// What "short" and "long" range are measured in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GapMetric {
    /// Difference in build order; never ties for distinct parents.
    #[default]
    Ordering,
    /// Difference in feature level, ties broken by build order.
    Level,
}

/// Connection parents each scale-permuted block keeps under `mode`. Blocks
/// that do not have exactly two parents are left as they are.
pub fn kept_parents(g: &BackboneGraph, mode: DamageMode, metric: GapMetric) -> BTreeMap<BlockId, Vec<BlockId>> {
    let idx = g.index();
    let mut by_order: Vec<_> = g.blocks().collect();
    by_order.sort_by_key(|b| b.ordering);
    let mut kept = BTreeMap::new();
    for (pos, b) in by_order.iter().enumerate() {
        if b.is_stem {
            continue;
        }
        let parents = g.parents(b.id);
        if parents.len() != 2 {
            kept.insert(b.id, parents);
            continue;
        }
        let gap = |p: &BlockId| {
            let pb = idx[p];
            let order_gap = b.ordering - pb.ordering;
            match metric {
                GapMetric::Ordering => (order_gap, 0),
                GapMetric::Level => (pb.level.get().abs_diff(b.level.get()) as u32, order_gap),
            }
        };
        let (near, far) = if gap(&parents[0]) < gap(&parents[1]) {
            (parents[0], parents[1])
        } else {
            (parents[1], parents[0])
        };
        let keep = match mode {
            DamageMode::RemoveShort => far,
            DamageMode::RemoveLong => near,
            DamageMode::Sequential => by_order[pos - 1].id,
        };
        kept.insert(b.id, vec![keep]);
    }
    kept
}

pub fn apply_graph_damage(g: &BackboneGraph, mode: DamageMode) -> Result<BackboneGraph> {
    apply_graph_damage_with(g, mode, GapMetric::Ordering)
}

/// Rewires every two-parent scale-permuted block to a single parent, then
/// recomputes orphan edges. Intermediates left without a consumer and without
/// an output block at their level (L2) are pruned, together with anything
/// that only fed them.
pub fn apply_graph_damage_with(g: &BackboneGraph, mode: DamageMode, metric: GapMetric) -> Result<BackboneGraph> {
    let report = validate_graph_with(g, ValidationMode::Relaxed);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let kept = kept_parents(g, mode, metric);
    let mut out = g.clone();
    out.name = format!("{}_{}", g.name, mode.name());
    out.edges = kept
        .iter()
        .flat_map(|(&child, ps)| ps.iter().map(move |&p| Edge::connection(p, child)))
        .collect();
    loop {
        match out.apply_orphan_rule() {
            Ok(()) => break,
            Err(Error::UnplaceableOrphan { position, level }) => {
                let id = out
                    .permuted
                    .iter()
                    .find(|b| b.ordering as usize == position)
                    .map(|b| b.id)
                    .expect("orphan position names a block");
                log::info!("damage left L{level} block {id} without a consumer; pruning it");
                out.permuted.retain(|b| b.id != id);
                out.edges.retain(|e| e.child != id);
            }
            Err(e) => return Err(e),
        }
    }
    let present: HashMap<(BlockId, BlockId), EdgeKind> =
        out.edges.iter().map(|e| ((e.parent, e.child), e.kind)).collect();
    out.uncertain.retain(|pc| present.contains_key(pc));
    out.sort_edges();
    let report = validate_graph_with(&out, ValidationMode::Relaxed);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::testutil::small_graph;

    #[test]
    fn template_block_counts() {
        let count = |t: FixedOrderingTemplate, l: u8| t.levels().iter().filter(|&&x| x == l).count();
        let h = FixedOrderingTemplate::Hourglass;
        assert_eq!([count(h, 2), count(h, 3), count(h, 4), count(h, 5), count(h, 6), count(h, 7)], [3, 4, 6, 2, 1, 1]);
        assert_eq!(build_fixed_ordering(h).outputs(), &[7, 6, 5, 4, 3]);
        assert_eq!(build_fixed_ordering(FixedOrderingTemplate::Fish).outputs(), &[3, 4, 5, 6, 7]);
    }

    #[test]
    fn gap_arithmetic() {
        // Block 5 has parents 3 and 4 in the small graph; make it {1, 4}.
        let mut g = small_graph();
        g.edges.retain(|e| !(e.parent == BlockId(3) && e.child == BlockId(5)));
        g.edges.push(Edge::connection(BlockId(1), BlockId(5)));
        let short = kept_parents(&g, DamageMode::RemoveShort, GapMetric::Ordering);
        let long = kept_parents(&g, DamageMode::RemoveLong, GapMetric::Ordering);
        assert_eq!(short[&BlockId(5)], vec![BlockId(1)]);
        assert_eq!(long[&BlockId(5)], vec![BlockId(4)]);
    }

    #[test]
    fn sequential_chains_blocks() {
        let g = apply_graph_damage(&small_graph(), DamageMode::Sequential).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.parent.0, e.child.0)).collect();
        assert_eq!(pairs, vec![(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]);
    }
}
