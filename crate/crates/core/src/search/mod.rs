//! Scale-permuted search space: permutations, cross-scale connections and
//! block adjustments, candidate assembly, space-size formulas and the
//! controller loop.
//!
//! A candidate is built in three steps. The permutation fixes the build order
//! of the `N` sampled blocks (intermediates first, the five output blocks
//! last). Connections then pick two parents for every sampled block from its
//! candidate pool: the `m` stem blocks plus every block built before it,
//! optionally restricted to the most recent `W` entries for intermediates.
//! Adjustments finally shift intermediate levels and pick each block's type.

mod controller;
mod enumerate;
mod reward;

use num_bigint::BigUint;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    ArchDocument, BackboneGraph, BlockId, BlockKind, BlockSpec, Edge, FeatureLevel, OUTPUT_LEVELS,
};
use crate::head::HeadConfig;
use crate::zoo::scale_variant;

pub use controller::{
    run_search, write_history_jsonl, ControllerKind, EvolutionConfig, HistoryEntry, SearchOptions, SearchOutcome,
    FAILED_REWARD,
};
pub use enumerate::{
    enumerate_adjustments, enumerate_connections, enumerate_permutations, enumerate_pool_pairs, topology_key, EdgeSet,
    PoolLayout, TopologyKey,
};
pub use reward::{parse_reward, ExecReward, GraphScore, NegFlops, RewardFn};

/// Number of output blocks; they always occupy the last positions.
pub const NUM_OUTPUTS: usize = OUTPUT_LEVELS.len();

/// Lowest and highest level an adjusted intermediate may land on.
pub const ADJUST_MIN_LEVEL: u8 = 2;
pub const ADJUST_MAX_LEVEL: u8 = 7;

/// Rejected samples tolerated before a configuration is declared unusable.
const MAX_REJECTIONS: usize = 10_000;

fn default_true() -> bool {
    true
}

fn default_stem_levels() -> Vec<u8> {
    vec![2, 2]
}

fn default_window() -> Option<usize> {
    Some(5)
}

fn default_deltas() -> Vec<i8> {
    vec![-1, 0, 1, 2]
}

fn default_kinds() -> Vec<BlockKind> {
    vec![BlockKind::Bottleneck, BlockKind::Residual]
}

fn default_widths() -> [u32; 7] {
    [64, 64, 128, 256, 256, 256, 256]
}

fn default_alpha() -> f64 {
    0.5
}

fn default_output_dim() -> u32 {
    256
}

fn default_output_order() -> [u8; 5] {
    OUTPUT_LEVELS
}

fn default_base_kind() -> BlockKind {
    BlockKind::Bottleneck
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceConfig {
    /// Levels of the `N - 5` intermediate blocks (a multiset).
    pub intermediate_levels: Vec<u8>,
    /// Levels of the stem blocks offered as parents; `m` is their count.
    #[serde(default = "default_stem_levels")]
    pub stem_levels: Vec<u8>,
    /// Intermediate blocks draw parents from the last `W` pool entries only.
    #[serde(default = "default_window")]
    pub parent_window: Option<usize>,
    #[serde(default = "default_true")]
    pub search_permutation: bool,
    #[serde(default = "default_true")]
    pub search_connections: bool,
    #[serde(default = "default_true")]
    pub enable_adjustments: bool,
    /// Type of every block when adjustments are off, and of the stem.
    #[serde(default = "default_base_kind")]
    pub base_kind: BlockKind,
    #[serde(default = "default_deltas")]
    pub level_deltas: Vec<i8>,
    #[serde(default = "default_kinds")]
    pub block_kinds: Vec<BlockKind>,
    /// Block width `C` per level L1..L7.
    #[serde(default = "default_widths")]
    pub widths: [u32; 7],
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_output_dim")]
    pub output_dim: u32,
    /// Output order used when permutations are not searched.
    #[serde(default = "default_output_order")]
    pub output_order: [u8; 5],
}

impl Default for SearchSpaceConfig {
    /// The SpineNet-49 block budget over a two-block L2 stem.
    fn default() -> Self {
        Self::with_intermediates(vec![2, 4, 3, 4, 6, 4, 5, 7, 5, 5])
    }
}

impl SearchSpaceConfig {
    pub fn with_intermediates(levels: Vec<u8>) -> Self {
        Self {
            intermediate_levels: levels,
            stem_levels: default_stem_levels(),
            parent_window: default_window(),
            search_permutation: true,
            search_connections: true,
            enable_adjustments: true,
            base_kind: default_base_kind(),
            level_deltas: default_deltas(),
            block_kinds: default_kinds(),
            widths: default_widths(),
            alpha: default_alpha(),
            output_dim: default_output_dim(),
            output_order: default_output_order(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Sampled blocks, `N`.
    pub fn num_blocks(&self) -> usize {
        self.intermediate_levels.len() + NUM_OUTPUTS
    }

    pub fn num_intermediates(&self) -> usize {
        self.intermediate_levels.len()
    }

    /// Stem candidates, `m`.
    pub fn num_stem(&self) -> usize {
        self.stem_levels.len()
    }

    pub fn width(&self, level: u8) -> u32 {
        self.widths[level as usize - 1]
    }

    /// Pool size of the `j`-th sampled block (0-based).
    pub fn pool_size(&self, j: usize) -> usize {
        PoolLayout::of(self).pool_size(j)
    }

    /// First pool index available to block `j`; the pool is a suffix of
    /// `0..m+j`.
    pub fn pool_start(&self, j: usize) -> usize {
        PoolLayout::of(self).pool_start(j)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SearchConfig(msg));
        if self.num_stem() < 2 {
            return bad(format!("need at least 2 stem candidates, got {}", self.num_stem()));
        }
        if let Some(w) = self.parent_window {
            if w < 2 {
                return bad(format!("parent window {w} leaves fewer than 2 parents"));
            }
        }
        for &l in &self.intermediate_levels {
            if !(ADJUST_MIN_LEVEL..=ADJUST_MAX_LEVEL).contains(&l) {
                return bad(format!("intermediate level {l} outside 2..=7"));
            }
        }
        let mut prev = 2u8;
        for &l in &self.stem_levels {
            if !(2..=5).contains(&l) || l < prev || l > prev + 1 {
                return bad(format!("stem levels {:?} must start at L2 and rise by at most one", self.stem_levels));
            }
            prev = l;
        }
        if self.enable_adjustments && (self.level_deltas.is_empty() || self.block_kinds.is_empty()) {
            return bad("adjustment choices must be non-empty".into());
        }
        if self.block_kinds.contains(&BlockKind::Mbconv) || self.base_kind == BlockKind::Mbconv {
            return bad("mbconv blocks are not part of the search space".into());
        }
        if self.widths.contains(&0) {
            return bad("widths must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::BadAlpha(self.alpha));
        }
        if self.output_dim == 0 {
            return bad("output_dim must be positive".into());
        }
        let mut outs = self.output_order;
        outs.sort_unstable();
        if outs != OUTPUT_LEVELS {
            return bad(format!("output_order {:?} is not a permutation of L3..L7", self.output_order));
        }
        Ok(())
    }
}

/// Build order of the sampled blocks as levels; the last five are the output
/// blocks and form a permutation of L3..L7.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    pub levels: Vec<u8>,
}

impl Permutation {
    /// Intermediates in configuration order, outputs in `output_order`.
    pub fn identity(cfg: &SearchSpaceConfig) -> Self {
        let mut levels = cfg.intermediate_levels.clone();
        levels.extend(cfg.output_order);
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn num_intermediates(&self) -> usize {
        self.levels.len().saturating_sub(NUM_OUTPUTS)
    }

    pub fn intermediates(&self) -> &[u8] {
        &self.levels[..self.num_intermediates()]
    }

    pub fn outputs(&self) -> &[u8] {
        &self.levels[self.num_intermediates()..]
    }

    pub fn is_output(&self, j: usize) -> bool {
        j >= self.num_intermediates()
    }

    /// Checks the permutation against `cfg`'s block budget.
    pub fn check(&self, cfg: &SearchSpaceConfig) -> Result<()> {
        let mut got = self.intermediates().to_vec();
        let mut want = cfg.intermediate_levels.clone();
        got.sort_unstable();
        want.sort_unstable();
        let mut outs = self.outputs().to_vec();
        outs.sort_unstable();
        if self.len() != cfg.num_blocks() || got != want || outs != OUTPUT_LEVELS {
            return Err(Error::SearchConfig(format!(
                "permutation {:?} does not match the block budget {:?} + outputs L3..L7",
                self.levels, cfg.intermediate_levels
            )));
        }
        Ok(())
    }
}

/// Level delta and block type of one sampled block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Adjustment {
    pub delta: i8,
    #[serde(rename = "type")]
    pub kind: BlockKind,
}

/// Parent pair of each sampled block as pool indices (stem blocks first, then
/// sampled blocks in build order); each pair is strictly increasing.
pub type Connections = Vec<[usize; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateArchitecture {
    pub permutation: Permutation,
    pub connections: Connections,
    pub adjustments: Vec<Adjustment>,
    pub graph: BackboneGraph,
}

/// Serialized form of a candidate, as written to search histories and fed to
/// external reward commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub permutation: Permutation,
    pub connections: Connections,
    pub adjustments: Vec<Adjustment>,
    pub graph: ArchDocument,
}

impl CandidateArchitecture {
    pub fn record(&self) -> CandidateRecord {
        CandidateRecord {
            permutation: self.permutation.clone(),
            connections: self.connections.clone(),
            adjustments: self.adjustments.clone(),
            graph: self.graph.to_document(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.record())?)
    }
}

pub fn sample_permutation(cfg: &SearchSpaceConfig, rng: &mut impl Rng) -> Permutation {
    let mut p = Permutation::identity(cfg);
    if cfg.search_permutation {
        let k = p.num_intermediates();
        p.levels[..k].shuffle(rng);
        p.levels[k..].shuffle(rng);
    }
    p
}

/// Uniform unordered pair of distinct entries from the pool of block `j`.
pub fn sample_pair(cfg: &SearchSpaceConfig, j: usize, rng: &mut impl Rng) -> [usize; 2] {
    let start = cfg.pool_start(j);
    let picked = index::sample(rng, cfg.pool_size(j), 2);
    let (a, b) = (picked.index(0), picked.index(1));
    [start + a.min(b), start + a.max(b)]
}

/// The two most recent pool entries; the fixed choice when connections are
/// not searched.
pub fn sequential_pair(cfg: &SearchSpaceConfig, j: usize) -> [usize; 2] {
    let end = cfg.num_stem() + j;
    [end - 2, end - 1]
}

pub fn sample_connections(perm: &Permutation, cfg: &SearchSpaceConfig, rng: &mut impl Rng) -> Result<Connections> {
    cfg.check()?;
    perm.check(cfg)?;
    Ok((0..perm.len())
        .map(|j| {
            if cfg.search_connections {
                sample_pair(cfg, j, rng)
            } else {
                sequential_pair(cfg, j)
            }
        })
        .collect())
}

pub fn sample_adjustment(cfg: &SearchSpaceConfig, is_output: bool, rng: &mut impl Rng) -> Adjustment {
    if !cfg.enable_adjustments {
        return Adjustment {
            delta: 0,
            kind: cfg.base_kind,
        };
    }
    let delta = if is_output {
        0
    } else {
        *cfg.level_deltas.choose(rng).expect("checked non-empty")
    };
    let kind = *cfg.block_kinds.choose(rng).expect("checked non-empty");
    Adjustment { delta, kind }
}

pub fn sample_adjustments(perm: &Permutation, cfg: &SearchSpaceConfig, rng: &mut impl Rng) -> Vec<Adjustment> {
    (0..perm.len())
        .map(|j| sample_adjustment(cfg, perm.is_output(j), rng))
        .collect()
}

/// Level of an intermediate after applying `delta`, clamped into L2..L7.
pub fn adjusted_level(level: u8, delta: i8) -> u8 {
    FeatureLevel::clamped(level as i32 + delta as i32, ADJUST_MIN_LEVEL, ADJUST_MAX_LEVEL).get()
}

fn stem_blocks(cfg: &SearchSpaceConfig) -> Vec<BlockSpec> {
    cfg.stem_levels
        .iter()
        .enumerate()
        .map(|(i, &l)| BlockSpec {
            id: BlockId(i as u32),
            ordering: i as u32,
            level: FeatureLevel::new(l).expect("checked stem level"),
            kind: cfg.base_kind,
            width: cfg.width(l),
            repeat: 1,
            is_output: false,
            is_stem: true,
        })
        .collect()
}

/// Builds the graph of a sampled triple, applies the orphan rule and
/// validates the result.
///
/// Fails with [`Error::UnplaceableOrphan`] when an intermediate adjusted down
/// to L2 has no consumer: there is no L2 output block to receive it.
pub fn assemble_candidate(
    cfg: &SearchSpaceConfig,
    perm: &Permutation,
    conns: &Connections,
    adjs: &[Adjustment],
) -> Result<CandidateArchitecture> {
    perm.check(cfg)?;
    let n = perm.len();
    if conns.len() != n || adjs.len() != n {
        return Err(Error::SearchConfig(format!(
            "{n} blocks but {} connection pairs and {} adjustments",
            conns.len(),
            adjs.len()
        )));
    }
    let m = cfg.num_stem();
    let mut g = BackboneGraph::empty("candidate");
    g.stem = stem_blocks(cfg);
    g.alpha = cfg.alpha;
    g.output_dim = cfg.output_dim;
    for (j, (&level, adj)) in perm.levels.iter().zip(adjs).enumerate() {
        let is_output = perm.is_output(j);
        if is_output && adj.delta != 0 {
            return Err(Error::SearchConfig(format!("output block at position {j} has a level delta")));
        }
        let level = if is_output { level } else { adjusted_level(level, adj.delta) };
        let id = (m + j) as u32;
        g.permuted.push(BlockSpec {
            id: BlockId(id),
            ordering: id,
            level: FeatureLevel::new(level)?,
            kind: adj.kind,
            width: cfg.width(level),
            repeat: 1,
            is_output,
            is_stem: false,
        });
        let [a, b] = conns[j];
        if a >= b || b >= m + j {
            return Err(Error::SearchConfig(format!(
                "block at position {j} has parent pair {:?} outside its pool 0..{}",
                [a, b],
                m + j
            )));
        }
        for p in [a, b] {
            g.edges.push(Edge::connection(BlockId(p as u32), BlockId(id)));
        }
    }
    g.apply_orphan_rule().map_err(|e| match e {
        // Report the position within the sampled blocks, not the global ordering.
        Error::UnplaceableOrphan { position, level } => Error::UnplaceableOrphan {
            position: position - m,
            level,
        },
        other => other,
    })?;
    g.sort_edges();
    let graph = g.validated()?;
    Ok(CandidateArchitecture {
        permutation: perm.clone(),
        connections: conns.clone(),
        adjustments: adjs.to_vec(),
        graph,
    })
}

/// Draws permutation, connections and adjustments, in that order, and
/// assembles them. Samples with an unplaceable L2 orphan are rejected and
/// redrawn.
pub fn sample_candidate(cfg: &SearchSpaceConfig, rng: &mut impl Rng) -> Result<CandidateArchitecture> {
    cfg.check()?;
    for _ in 0..MAX_REJECTIONS {
        let perm = sample_permutation(cfg, rng);
        let conns = sample_connections(&perm, cfg, rng)?;
        let adjs = sample_adjustments(&perm, cfg, rng);
        match assemble_candidate(cfg, &perm, &conns, &adjs) {
            Err(Error::UnplaceableOrphan { position, level }) => {
                log::debug!("rejected sample: dangling L{level} block at position {position}");
            }
            other => return other,
        }
    }
    Err(Error::SearchConfig(format!(
        "{MAX_REJECTIONS} consecutive samples left an unplaceable orphan"
    )))
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).map(BigUint::from).product()
}

fn choose2(n: usize) -> BigUint {
    BigUint::from((n * n.saturating_sub(1) / 2) as u64)
}

/// Size of the space spanned by the enabled factors:
/// `(N-5)! * 5!` orderings, `prod_j C(pool_j, 2)` parent pairs and
/// `|deltas|^(N-5) * |types|^N` adjustments.
pub fn space_size(cfg: &SearchSpaceConfig) -> BigUint {
    let mut size = BigUint::from(1u32);
    if cfg.search_permutation {
        size *= permutation_factor(cfg);
    }
    if cfg.search_connections {
        size *= connection_factor(cfg);
    }
    if cfg.enable_adjustments {
        size *= adjustment_factor(cfg);
    }
    size
}

pub fn permutation_factor(cfg: &SearchSpaceConfig) -> BigUint {
    factorial(cfg.num_intermediates()) * factorial(NUM_OUTPUTS)
}

pub fn connection_factor(cfg: &SearchSpaceConfig) -> BigUint {
    pool_pair_count(PoolLayout::of(cfg))
}

/// `prod_j C(pool_j, 2)` for an arbitrary pool layout.
pub fn pool_pair_count(layout: PoolLayout) -> BigUint {
    (0..layout.blocks).map(|j| choose2(layout.pool_size(j))).product()
}

pub fn adjustment_factor(cfg: &SearchSpaceConfig) -> BigUint {
    BigUint::from(cfg.level_deltas.len()).pow(cfg.num_intermediates() as u32)
        * BigUint::from(cfg.block_kinds.len()).pow(cfg.num_blocks() as u32)
}

/// Width reduction applied to search-time proxy models.
pub const PROXY_WIDTH_FACTOR: f64 = 0.25;
pub const PROXY_ALPHA: f64 = 0.25;
pub const PROXY_HEAD_WIDTH: u32 = 64;

/// Search-time proxy: block widths x0.25 (half-up), alpha 0.25, same topology.
/// The entry conv and `output_dim` are kept.
pub fn make_proxy(g: &BackboneGraph) -> Result<BackboneGraph> {
    let mut p = scale_variant(g, 1, PROXY_WIDTH_FACTOR, PROXY_ALPHA)?;
    p.name = format!("{}_proxy", g.name);
    p.validated()
}

/// RetinaNet head used with proxy models.
pub fn proxy_head() -> HeadConfig {
    HeadConfig::retinanet(4, PROXY_HEAD_WIDTH)
}
