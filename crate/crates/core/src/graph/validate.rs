use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use super::{BackboneGraph, BlockId, Decoder, EdgeKind, OUTPUT_LEVELS};

/// How strictly in-degrees of scale-permuted blocks are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationMode {
    /// Exactly two distinct connection parents per scale-permuted block.
    Strict,
    /// One or two; used for damaged ablation graphs.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(BlockId),
    DuplicateOrdering(u32),
    StemNotFirst { stem: BlockId, permuted: BlockId },
    StemFlag(BlockId),
    LevelRange { block: BlockId, level: u8, lo: u8, hi: u8 },
    ZeroWidth(BlockId),
    ZeroRepeat(BlockId),
    StemLevelStep { block: BlockId, from: u8, to: u8 },
    StemOutput(BlockId),
    UnknownBlock { parent: BlockId, child: BlockId },
    OrderingViolation { parent: BlockId, child: BlockId },
    EdgeIntoStem { parent: BlockId, child: BlockId },
    OutputCount(usize),
    DuplicateOutputLevel(u8),
    MissingOutputLevel(u8),
    InDegree { block: BlockId, found: usize, expected: &'static str },
    DuplicateParent { block: BlockId, parent: BlockId },
    Dangling(BlockId),
    Unreachable(BlockId),
    BadOrphan { parent: BlockId, child: BlockId, reason: &'static str },
    Cycle(Vec<BlockId>),
    Decoder(String),
    BadAlpha(String),
    ZeroOutputDim,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateId(b) => write!(f, "duplicate block id {b}"),
            DuplicateOrdering(o) => write!(f, "duplicate ordering {o}"),
            StemNotFirst { stem, permuted } => {
                write!(f, "stem block {stem} is ordered after scale-permuted block {permuted}")
            }
            StemFlag(b) => write!(f, "block {b} has an is_stem flag inconsistent with its list"),
            LevelRange { block, level, lo, hi } => {
                write!(f, "block {block} at L{level} outside allowed range L{lo}..L{hi}")
            }
            ZeroWidth(b) => write!(f, "block {b} has width 0"),
            ZeroRepeat(b) => write!(f, "block {b} has repeat count 0"),
            StemLevelStep { block, from, to } => {
                write!(f, "stem block {block} steps from L{from} to L{to}; stem levels must rise by at most one")
            }
            StemOutput(b) => write!(f, "stem block {b} is marked as an output block"),
            UnknownBlock { parent, child } => write!(f, "edge {parent}->{child} names an unknown block"),
            OrderingViolation { parent, child } => {
                write!(f, "ordering violation: edge {parent}->{child} does not go to a higher ordering")
            }
            EdgeIntoStem { parent, child } => write!(f, "edge {parent}->{child} targets a stem block"),
            OutputCount(n) => write!(f, "expected 5 output blocks, found {n}"),
            DuplicateOutputLevel(l) => write!(f, "duplicate output level L{l}"),
            MissingOutputLevel(l) => write!(f, "missing output level L{l}"),
            InDegree { block, found, expected } => {
                write!(f, "block {block} has {found} connection parents, expected {expected}")
            }
            DuplicateParent { block, parent } => write!(f, "block {block} uses parent {parent} twice"),
            Dangling(b) => write!(f, "intermediate block {b} has no outgoing edge"),
            Unreachable(b) => write!(f, "block {b} is not reachable from the stem"),
            BadOrphan { parent, child, reason } => write!(f, "orphan edge {parent}->{child}: {reason}"),
            Cycle(blocks) => {
                let ids: Vec<String> = blocks.iter().map(|b| b.to_string()).collect();
                write!(f, "cycle through blocks {}", ids.join(", "))
            }
            Decoder(msg) => write!(f, "decoder: {msg}"),
            BadAlpha(msg) => write!(f, "alpha: {msg}"),
            ZeroOutputDim => write!(f, "output_dim is 0"),
        }
    }
}

/// Every violated invariant of a graph; empty iff the graph is valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

pub fn validate_graph(g: &BackboneGraph) -> ValidationReport {
    validate_graph_with(g, ValidationMode::Strict)
}

pub fn validate_graph_with(g: &BackboneGraph, mode: ValidationMode) -> ValidationReport {
    let mut out = Vec::new();
    check_blocks(g, &mut out);
    check_edges(g, mode, &mut out);
    check_decoder(g, &mut out);
    if !(g.alpha.is_finite() && g.alpha > 0.0) {
        out.push(Violation::BadAlpha(format!("{} is not a positive number", g.alpha)));
    }
    if g.output_dim == 0 && g.decoder != Decoder::None {
        out.push(Violation::ZeroOutputDim);
    }
    ValidationReport { violations: out }
}

fn check_blocks(g: &BackboneGraph, out: &mut Vec<Violation>) {
    let mut ids = HashSet::new();
    let mut orderings = HashSet::new();
    for b in g.blocks() {
        if !ids.insert(b.id) {
            out.push(Violation::DuplicateId(b.id));
        }
        if !orderings.insert(b.ordering) {
            out.push(Violation::DuplicateOrdering(b.ordering));
        }
        if b.width == 0 {
            out.push(Violation::ZeroWidth(b.id));
        }
        if b.repeat == 0 {
            out.push(Violation::ZeroRepeat(b.id));
        }
    }
    for s in &g.stem {
        if !s.is_stem {
            out.push(Violation::StemFlag(s.id));
        }
        if s.is_output {
            out.push(Violation::StemOutput(s.id));
        }
        let l = s.level.get();
        if !(1..=5).contains(&l) {
            out.push(Violation::LevelRange { block: s.id, level: l, lo: 1, hi: 5 });
        }
    }
    for p in &g.permuted {
        if p.is_stem {
            out.push(Violation::StemFlag(p.id));
        }
        let l = p.level.get();
        if !(2..=7).contains(&l) {
            out.push(Violation::LevelRange { block: p.id, level: l, lo: 2, hi: 7 });
        }
    }
    if let (Some(last_stem), Some(first_perm)) = (
        g.stem.iter().max_by_key(|b| b.ordering),
        g.permuted.iter().min_by_key(|b| b.ordering),
    ) {
        if last_stem.ordering > first_perm.ordering {
            out.push(Violation::StemNotFirst { stem: last_stem.id, permuted: first_perm.id });
        }
    }
    let mut prev = g.entry.output_level();
    for s in &g.stem {
        let l = s.level.get();
        if l < prev || l > prev + 1 {
            out.push(Violation::StemLevelStep { block: s.id, from: prev, to: l });
        }
        prev = l;
    }
}

fn check_edges(g: &BackboneGraph, mode: ValidationMode, out: &mut Vec<Violation>) {
    let index = g.index();
    let mut parents: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    let mut has_out: HashSet<BlockId> = HashSet::new();
    for e in &g.edges {
        let (Some(p), Some(c)) = (index.get(&e.parent), index.get(&e.child)) else {
            out.push(Violation::UnknownBlock { parent: e.parent, child: e.child });
            continue;
        };
        if p.ordering >= c.ordering {
            out.push(Violation::OrderingViolation { parent: e.parent, child: e.child });
        }
        if c.is_stem {
            out.push(Violation::EdgeIntoStem { parent: e.parent, child: e.child });
        }
        has_out.insert(e.parent);
        match e.kind {
            EdgeKind::Connection => parents.entry(e.child).or_default().push(e.parent),
            EdgeKind::Orphan => {
                let reason = if p.is_stem || p.is_output {
                    Some("parent is not an intermediate block")
                } else if !c.is_output {
                    Some("child is not an output block")
                } else if p.level != c.level {
                    Some("parent and output block levels differ")
                } else {
                    None
                };
                if let Some(reason) = reason {
                    out.push(Violation::BadOrphan { parent: e.parent, child: e.child, reason });
                }
            }
        }
    }

    for b in &g.permuted {
        let ps = parents.get(&b.id).map(Vec::as_slice).unwrap_or(&[]);
        let ok = match mode {
            ValidationMode::Strict => ps.len() == 2,
            ValidationMode::Relaxed => (1..=2).contains(&ps.len()),
        };
        if !ok {
            let expected = match mode {
                ValidationMode::Strict => "exactly 2",
                ValidationMode::Relaxed => "1 or 2",
            };
            out.push(Violation::InDegree { block: b.id, found: ps.len(), expected });
        }
        let mut seen = HashSet::new();
        for p in ps {
            if !seen.insert(*p) {
                out.push(Violation::DuplicateParent { block: b.id, parent: *p });
            }
        }
        if !b.is_output && !has_out.contains(&b.id) {
            out.push(Violation::Dangling(b.id));
        }
    }

    // Reachability, in build order; stem blocks are reached through the stem chain.
    let mut order: Vec<_> = g.blocks().collect();
    order.sort_by_key(|b| b.ordering);
    let mut reached: HashSet<BlockId> = g.stem.iter().map(|b| b.id).collect();
    for b in order.iter().filter(|b| !b.is_stem) {
        if g.incoming(b.id).any(|e| reached.contains(&e.parent)) {
            reached.insert(b.id);
        }
    }
    for b in &g.permuted {
        if !reached.contains(&b.id) {
            out.push(Violation::Unreachable(b.id));
        }
    }

    if let Some(cycle) = find_cycle(g) {
        out.push(Violation::Cycle(cycle));
    }
}

/// Kahn's algorithm over edges plus the implicit stem chain; returns the
/// blocks left over when a cycle blocks progress.
fn find_cycle(g: &BackboneGraph) -> Option<Vec<BlockId>> {
    let ids: Vec<BlockId> = g.blocks().map(|b| b.id).collect();
    let known: HashSet<BlockId> = ids.iter().copied().collect();
    let mut succ: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    let mut indeg: HashMap<BlockId, usize> = ids.iter().map(|&i| (i, 0)).collect();
    let chain = g.stem.windows(2).map(|w| (w[0].id, w[1].id));
    let edges = g.edges.iter().map(|e| (e.parent, e.child));
    for (p, c) in chain.chain(edges) {
        if known.contains(&p) && known.contains(&c) {
            succ.entry(p).or_default().push(c);
            *indeg.get_mut(&c).unwrap() += 1;
        }
    }
    let mut queue: VecDeque<BlockId> = ids.iter().copied().filter(|i| indeg[i] == 0).collect();
    let mut visited = 0;
    while let Some(n) = queue.pop_front() {
        visited += 1;
        for &c in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indeg.get_mut(&c).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(c);
            }
        }
    }
    if visited == ids.len() {
        None
    } else {
        let mut left: Vec<BlockId> = ids.into_iter().filter(|i| indeg[i] > 0).collect();
        left.sort();
        Some(left)
    }
}

fn check_decoder(g: &BackboneGraph, out: &mut Vec<Violation>) {
    match g.decoder {
        Decoder::OutputProjections => {
            let outputs: Vec<u8> = g.output_blocks().map(|b| b.level.get()).collect();
            if outputs.len() != 5 {
                out.push(Violation::OutputCount(outputs.len()));
            }
            let mut seen = HashSet::new();
            for l in &outputs {
                if !seen.insert(*l) || !OUTPUT_LEVELS.contains(l) {
                    out.push(Violation::DuplicateOutputLevel(*l));
                }
            }
            for l in OUTPUT_LEVELS {
                if !seen.contains(&l) {
                    out.push(Violation::MissingOutputLevel(l));
                }
            }
        }
        Decoder::Fpn | Decoder::None => {
            if !g.permuted.is_empty() {
                out.push(Violation::Decoder(format!(
                    "{:?} decoder takes a stem-only graph, found {} scale-permuted blocks",
                    g.decoder,
                    g.permuted.len()
                )));
            }
            if g.stem.is_empty() {
                out.push(Violation::Decoder("stem is empty".into()));
            }
            if g.decoder == Decoder::Fpn {
                for l in 3..=5 {
                    if g.stem_tap(l).is_none() {
                        out.push(Violation::Decoder(format!("FPN needs a stem block at L{l}")));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{BlockKind, Edge, FeatureLevel};
    use super::*;

    #[test]
    fn small_graph_is_valid() {
        let r = validate_graph(&small_graph());
        assert!(r.is_empty(), "{r}");
    }

    #[test]
    fn backward_edge_is_an_ordering_violation() {
        let mut g = small_graph();
        // Replace one parent of block 3 with block 5 (higher ordering).
        let e = g.edges.iter_mut().find(|e| e.child == BlockId(3) && e.parent == BlockId(1)).unwrap();
        e.parent = BlockId(5);
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::OrderingViolation { parent: BlockId(5), child: BlockId(3) })));
    }

    #[test]
    fn duplicate_output_levels_are_reported() {
        let mut g = small_graph();
        // outputs become {L3, L3, L4, L5, L6}
        g.permuted[2].level = FeatureLevel::new(3).unwrap();
        g.permuted[3].level = FeatureLevel::new(4).unwrap();
        g.permuted[4].level = FeatureLevel::new(5).unwrap();
        g.permuted[5].level = FeatureLevel::new(6).unwrap();
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::DuplicateOutputLevel(3))), "{r}");
        assert!(r.contains(|v| matches!(v, Violation::MissingOutputLevel(7))), "{r}");
    }

    #[test]
    fn missing_parent_and_dangling_are_reported() {
        let mut g = small_graph();
        g.edges.retain(|e| !(e.parent == BlockId(2) && e.child == BlockId(4)));
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::InDegree { block: BlockId(4), found: 1, .. })));
        assert!(r.contains(|v| matches!(v, Violation::Dangling(BlockId(2)))));
        assert!(validate_graph_with(&g, ValidationMode::Relaxed)
            .contains(|v| matches!(v, Violation::Dangling(BlockId(2)))));
    }

    #[test]
    fn same_parent_twice_is_rejected() {
        let mut g = small_graph();
        let e = g.edges.iter_mut().find(|e| e.child == BlockId(2) && e.parent == BlockId(1)).unwrap();
        e.parent = BlockId(0);
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::DuplicateParent { block: BlockId(2), parent: BlockId(0) })));
    }

    #[test]
    fn cycles_are_found() {
        let mut g = small_graph();
        g.edges.push(Edge::connection(BlockId(7), BlockId(6)));
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::Cycle(_))), "{r}");
        assert!(r.contains(|v| matches!(v, Violation::OrderingViolation { .. })));
    }

    #[test]
    fn orphan_edges_must_hit_same_level_output() {
        let mut g = small_graph();
        g.edges.push(Edge::orphan(BlockId(2), BlockId(5)));
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::BadOrphan { .. })), "{r}");
    }

    #[test]
    fn permuted_level_one_is_out_of_range() {
        let mut g = small_graph();
        g.permuted[0] = block(2, 1, BlockKind::Residual, 16, false);
        let r = validate_graph(&g);
        assert!(r.contains(|v| matches!(v, Violation::LevelRange { level: 1, .. })));
    }
}
