//! Exhaustive enumeration of each search factor, for checking the space-size
//! formulas on small configurations.

use super::{Adjustment, Connections, Permutation, SearchSpaceConfig, NUM_OUTPUTS};
use crate::graph::{BackboneGraph, BlockKind, OUTPUT_LEVELS};

/// Edge set of a graph with at most 16 blocks, as a bitset over
/// `(parent ordering, child ordering)`. Orphan edges need no separate bit:
/// they only leave blocks that have no connection edge out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeSet([u64; 4]);

impl EdgeSet {
    pub const MAX_BLOCKS: usize = 16;

    /// `None` when the graph has more than 16 blocks.
    pub fn of(g: &BackboneGraph) -> Option<Self> {
        if g.block_count() > Self::MAX_BLOCKS {
            return None;
        }
        let ord = g.index();
        let mut bits = [0u64; 4];
        for e in &g.edges {
            let p = ord.get(&e.parent)?.ordering as usize;
            let c = ord.get(&e.child)?.ordering as usize;
            if p >= Self::MAX_BLOCKS || c >= Self::MAX_BLOCKS {
                return None;
            }
            let bit = p << 4 | c;
            bits[bit / 64] |= 1 << (bit % 64);
        }
        Some(Self(bits))
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Block descriptors (level, type, output flag) in ordering, plus the edge set.
pub type TopologyKey = (Vec<(u8, BlockKind, bool)>, EdgeSet);

pub fn topology_key(g: &BackboneGraph) -> Option<TopologyKey> {
    let mut blocks: Vec<_> = g.blocks().collect();
    blocks.sort_by_key(|b| b.ordering);
    let desc = blocks.iter().map(|b| (b.level.get(), b.kind, b.is_output)).collect();
    Some((desc, EdgeSet::of(g)?))
}

fn permutations_of<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations_of(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Every ordering of the intermediates (as labelled blocks) times every
/// ordering of the outputs: `(N-5)! * 5!` entries.
pub fn enumerate_permutations(cfg: &SearchSpaceConfig) -> Vec<Permutation> {
    let inter = permutations_of(&cfg.intermediate_levels);
    let outs = permutations_of(&OUTPUT_LEVELS);
    let mut all = Vec::with_capacity(inter.len() * outs.len());
    for i in &inter {
        for o in &outs {
            let mut levels = i.clone();
            levels.extend(o);
            all.push(Permutation { levels });
        }
    }
    all
}

/// Shape of the candidate pools: `stem` entries up front, `blocks` sampled
/// blocks of which the first `intermediates` are windowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolLayout {
    pub stem: usize,
    pub blocks: usize,
    pub intermediates: usize,
    pub window: Option<usize>,
}

impl PoolLayout {
    pub fn of(cfg: &SearchSpaceConfig) -> Self {
        Self {
            stem: cfg.num_stem(),
            blocks: cfg.num_blocks(),
            intermediates: cfg.num_intermediates(),
            window: cfg.parent_window,
        }
    }

    pub fn pool_size(&self, j: usize) -> usize {
        let full = self.stem + j;
        match self.window {
            Some(w) if j < self.intermediates => full.min(w),
            _ => full,
        }
    }

    pub fn pool_start(&self, j: usize) -> usize {
        self.stem + j - self.pool_size(j)
    }
}

/// Odometer over the parent pairs of every block, each drawn from its pool.
pub fn enumerate_connections(cfg: &SearchSpaceConfig) -> impl Iterator<Item = Connections> {
    enumerate_pool_pairs(PoolLayout::of(cfg))
}

pub fn enumerate_pool_pairs(layout: PoolLayout) -> impl Iterator<Item = Connections> {
    let choices: Vec<Vec<[usize; 2]>> = (0..layout.blocks)
        .map(|j| {
            let start = layout.pool_start(j);
            let end = layout.stem + j;
            let mut pairs = Vec::new();
            for a in start..end {
                for b in a + 1..end {
                    pairs.push([a, b]);
                }
            }
            pairs
        })
        .collect();
    let mut counters = vec![0usize; choices.len()];
    let mut done = choices.iter().any(|c| c.is_empty());
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let item: Connections = counters.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        // Advance, last block fastest.
        let mut k = counters.len();
        loop {
            if k == 0 {
                done = true;
                break;
            }
            k -= 1;
            counters[k] += 1;
            if counters[k] < choices[k].len() {
                break;
            }
            counters[k] = 0;
        }
        Some(item)
    })
}

/// Every combination of level deltas (intermediates) and block types (all
/// blocks): `|deltas|^(N-5) * |types|^N` entries.
pub fn enumerate_adjustments(cfg: &SearchSpaceConfig) -> Vec<Vec<Adjustment>> {
    let n = cfg.num_blocks();
    let k = n - NUM_OUTPUTS;
    let mut all: Vec<Vec<Adjustment>> = vec![Vec::new()];
    for j in 0..n {
        let deltas: &[i8] = if j < k { &cfg.level_deltas } else { &[0] };
        let mut next = Vec::with_capacity(all.len() * deltas.len() * cfg.block_kinds.len());
        for prefix in &all {
            for &delta in deltas {
                for &kind in &cfg.block_kinds {
                    let mut v = prefix.clone();
                    v.push(Adjustment { delta, kind });
                    next.push(v);
                }
            }
        }
        all = next;
    }
    all
}
