//! Shared oracles and criterion checks for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spine_core::ablation::{apply_graph_damage, kept_parents, DamageMode, GapMetric};
use spine_core::cost::{count_model, golden_table, GoldenCheck};
use spine_core::executor::{forward, forward_classifier, init_weights, random_input, ForwardOutput, WeightStore};
use spine_core::graph::{infer_shapes, validate_graph, BackboneGraph, BlockKind, EdgeKind};
use spine_core::head::{HeadKind, ModelWithHead};
use spine_core::layers::{lower, LayerOp, LayerRecord};
use spine_core::resample::{plan_for_edge, ResampleConfig, ResampleStage};
use spine_core::search::{
    adjustment_factor, assemble_candidate, connection_factor, enumerate_connections, make_proxy, permutation_factor,
    run_search, sample_candidate, space_size, topology_key, Adjustment, ControllerKind, EvolutionConfig, NegFlops,
    Permutation, SearchOptions, SearchSpaceConfig,
};
use spine_core::zoo::{with_default_head, VariantId, Zoo};

/// Outcome of one acceptance criterion.
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", if self.pass { "PASS" } else { "FAIL" }, self.detail)
    }
}

pub fn zoo() -> Zoo {
    Zoo::embedded()
}

pub fn all_graphs() -> Vec<BackboneGraph> {
    let z = zoo();
    VariantId::ALL.iter().map(|&v| z.build_variant(v).unwrap()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Published numbers, transcribed independently of goldens/*.json.

/// (table, model, resolution, head, madds, params)
pub const PUBLISHED: &[(&str, &str, u32, HeadKind, f64, Option<f64>)] = &[
    ("table2", "spinenet49s", 640, HeadKind::Retinanet, 33.8e9, Some(11.9e6)),
    ("table2", "spinenet49", 640, HeadKind::Retinanet, 85.4e9, Some(28.5e6)),
    ("table2", "spinenet49", 896, HeadKind::Retinanet, 167.4e9, Some(28.5e6)),
    ("table2", "spinenet96", 1024, HeadKind::Retinanet, 265.4e9, Some(43.0e6)),
    ("table2", "spinenet143", 1280, HeadKind::Retinanet, 524.4e9, Some(66.9e6)),
    ("table2", "spinenet190", 1280, HeadKind::Retinanet, 1885.0e9, Some(163.6e6)),
    ("table2", "resnet50fpn", 640, HeadKind::Retinanet, 96.8e9, Some(34.0e6)),
    ("table3", "spinenet49", 640, HeadKind::Maskrcnn, 216.1e9, Some(40.8e6)),
    ("table4", "spinenet49", 224, HeadKind::Classifier, 3.5e9, Some(22.1e6)),
    ("table4", "spinenet96", 224, HeadKind::Classifier, 5.7e9, Some(36.5e6)),
    ("table4", "spinenet143", 224, HeadKind::Classifier, 9.1e9, Some(60.5e6)),
    ("table4", "resnet50fpn", 224, HeadKind::FinalFeatureClassifier, 4.1e9, Some(25.6e6)),
    ("table7", "spinenet49xs_mb", 256, HeadKind::Retinanet, 0.17e9, Some(0.82e6)),
    ("table7", "spinenet49s_mb", 384, HeadKind::Retinanet, 0.52e9, Some(0.97e6)),
    ("table7", "spinenet49_mb", 384, HeadKind::Retinanet, 1.00e9, Some(2.32e6)),
];

pub const R0SP53_MADDS: f64 = 95.2e9;
pub const SPINENET49_MADDS: f64 = 85.4e9;

/// Every row of a golden table, each with the time its count took.
pub fn golden_rows(table: &str) -> Vec<(GoldenCheck, Duration)> {
    let z = zoo();
    golden_table(table)
        .unwrap()
        .rows
        .iter()
        .map(|row| {
            let t = Instant::now();
            let m = z.model(&row.model, row.head).unwrap();
            let report = count_model(&m, row.resolution).unwrap();
            (row.check(&report), t.elapsed())
        })
        .collect()
}

fn summarize(rows: &[(GoldenCheck, Duration)]) -> String {
    rows.iter()
        .map(|(c, _)| {
            let p = c.params_rel_err.map(|p| format!(" params {:+.2}%", 100.0 * p)).unwrap_or_default();
            format!("{}@{} madds {:+.2}%{p}", c.model, c.resolution, 100.0 * c.madds_rel_err)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn check_golden(table: &str, time_limit: Option<Duration>) -> Check {
    let rows = golden_rows(table);
    let slow = time_limit.map_or(false, |lim| rows.iter().any(|(_, t)| *t >= lim));
    let pass = !rows.is_empty() && rows.iter().all(|(c, _)| c.pass) && !slow;
    let worst = rows.iter().map(|(_, t)| *t).max().unwrap_or_default();
    Check::new(pass, format!("{}; slowest {worst:.2?}", summarize(&rows)))
}

pub fn retinanet_madds(model: &str, resolution: u32) -> u64 {
    let m = zoo().model(model, HeadKind::Retinanet).unwrap();
    count_model(&m, resolution).unwrap().grand_total.madds
}

pub fn criterion2() -> Check {
    let ratio = retinanet_madds("spinenet49", 640) as f64 / retinanet_madds("r0sp53", 640) as f64;
    let published = SPINENET49_MADDS / R0SP53_MADDS;
    let pass = (0.86..=0.94).contains(&ratio);
    Check::new(
        pass,
        format!("SpineNet-49 / R0-SP53 = {ratio:.4} (published {published:.4}); R0-SP53 wiring is provisional"),
    )
}

// ---------------------------------------------------------------------------
// Search-space enumeration oracles.

/// Parent pools written out directly: block `j` may use any of the
/// `m + j` earlier entries, intermediates only the last `window` of them.
pub fn oracle_pools(m: usize, blocks: usize, intermediates: usize, window: Option<usize>) -> Vec<Vec<usize>> {
    (0..blocks)
        .map(|j| {
            let end = m + j;
            let start = match window {
                Some(w) if j < intermediates && end > w => end - w,
                _ => 0,
            };
            (start..end).collect()
        })
        .collect()
}

/// Every tuple of unordered parent pairs over the pools, via bitmasks.
pub fn oracle_connection_tuples(pools: &[Vec<usize>]) -> Vec<Vec<[usize; 2]>> {
    let mut out: Vec<Vec<[usize; 2]>> = vec![Vec::new()];
    for pool in pools {
        let mut pairs = Vec::new();
        for mask in 0u32..(1 << pool.len()) {
            if mask.count_ones() == 2 {
                let picked: Vec<usize> = (0..pool.len()).filter(|i| mask >> i & 1 == 1).map(|i| pool[i]).collect();
                pairs.push([picked[0], picked[1]]);
            }
        }
        out = out
            .iter()
            .flat_map(|prefix| {
                pairs.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.push(*p);
                    v
                })
            })
            .collect();
    }
    out
}

/// Edges of an assembled candidate as two bitsets (connection, orphan) over
/// `parent * 16 + child`.
pub fn edge_key(g: &BackboneGraph) -> ([u64; 4], [u64; 4]) {
    let mut conn = [0u64; 4];
    let mut orphan = [0u64; 4];
    for e in &g.edges {
        let bit = (e.parent.0 * 16 + e.child.0) as usize;
        let set = if e.kind == EdgeKind::Orphan { &mut orphan } else { &mut conn };
        set[bit / 64] |= 1 << (bit % 64);
    }
    (conn, orphan)
}

/// Intermediates with pairwise-distinct levels so no two orderings coincide
/// and no adjustment is clamped.
pub fn distinct_intermediates(k: usize) -> Vec<u8> {
    [4, 3, 5][..k].to_vec()
}

pub fn connections_only(k: usize, m: usize, window: Option<usize>) -> SearchSpaceConfig {
    let mut cfg = SearchSpaceConfig::with_intermediates(distinct_intermediates(k));
    cfg.stem_levels = [2, 2, 3][..m].to_vec();
    cfg.parent_window = window;
    cfg.search_permutation = false;
    cfg.enable_adjustments = false;
    cfg
}

pub fn sequential(m: usize, n: usize) -> Vec<[usize; 2]> {
    (0..n).map(|j| [m + j - 2, m + j - 1]).collect()
}

pub fn all_orderings<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    let n = items.len();
    // Every n-tuple of indices, keeping those that use each index once.
    let mut out = Vec::new();
    let total = n.pow(n as u32);
    for code in 0..total.max(1) {
        let mut idx = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            idx.push(c % n.max(1));
            c /= n.max(1);
        }
        let unique: BTreeSet<_> = idx.iter().collect();
        if unique.len() == n {
            out.push(idx.iter().map(|&i| items[i].clone()).collect());
        }
    }
    out
}

pub struct FactorCount {
    pub label: String,
    pub distinct: usize,
    pub formula: u64,
}

impl FactorCount {
    pub fn ok(&self) -> bool {
        self.distinct as u64 == self.formula
    }
}

fn to_u64(b: num_bigint::BigUint) -> u64 {
    u64::try_from(b).expect("small space")
}

/// Distinct candidates over every connection tuple of a connections-only
/// space, against `connection_factor`.
pub fn count_connections(k: usize, m: usize, window: Option<usize>) -> FactorCount {
    let cfg = connections_only(k, m, window);
    let perm = Permutation::identity(&cfg);
    let n = perm.len();
    let adjs = vec![
        Adjustment {
            delta: 0,
            kind: BlockKind::Bottleneck
        };
        n
    ];
    let tuples = oracle_connection_tuples(&oracle_pools(m, n, k, window));
    let mut keys = Vec::with_capacity(tuples.len());
    for conns in &tuples {
        match assemble_candidate(&cfg, &perm, conns, &adjs) {
            Ok(c) => keys.push(edge_key(&c.graph)),
            Err(e) => panic!("connections {conns:?} failed to assemble: {e}"),
        }
    }
    keys.sort_unstable();
    keys.dedup();
    FactorCount {
        label: format!("connections k={k} m={m} window={window:?}"),
        distinct: keys.len(),
        formula: to_u64(connection_factor(&cfg)),
    }
}

/// Distinct assembled orderings (sequential wiring) against `permutation_factor`.
pub fn count_permutations(k: usize) -> FactorCount {
    let mut cfg = SearchSpaceConfig::with_intermediates(distinct_intermediates(k));
    cfg.search_connections = false;
    cfg.enable_adjustments = false;
    let n = k + 5;
    let adjs = vec![
        Adjustment {
            delta: 0,
            kind: BlockKind::Bottleneck
        };
        n
    ];
    let conns = sequential(2, n);
    let mut keys = HashSet::new();
    for inter in all_orderings(&cfg.intermediate_levels) {
        for outs in all_orderings(&[3u8, 4, 5, 6, 7]) {
            let levels: Vec<u8> = inter.iter().chain(&outs).copied().collect();
            let c = assemble_candidate(&cfg, &Permutation { levels }, &conns, &adjs).unwrap();
            keys.insert(topology_key(&c.graph).unwrap());
        }
    }
    FactorCount {
        label: format!("permutations k={k}"),
        distinct: keys.len(),
        formula: to_u64(permutation_factor(&cfg)),
    }
}

/// Distinct assembled adjustment outcomes (identity ordering, sequential
/// wiring) against `adjustment_factor`.
pub fn count_adjustments(k: usize) -> FactorCount {
    let mut cfg = SearchSpaceConfig::with_intermediates(distinct_intermediates(k));
    cfg.search_permutation = false;
    cfg.search_connections = false;
    let perm = Permutation::identity(&cfg);
    let n = perm.len();
    let conns = sequential(2, n);
    let kinds = [BlockKind::Bottleneck, BlockKind::Residual];
    let mut all: Vec<Vec<Adjustment>> = vec![Vec::new()];
    for j in 0..n {
        let deltas: &[i8] = if j < k { &[-1, 0, 1, 2] } else { &[0] };
        let mut next = Vec::new();
        for p in &all {
            for &delta in deltas {
                for &kind in &kinds {
                    let mut v = p.clone();
                    v.push(Adjustment { delta, kind });
                    next.push(v);
                }
            }
        }
        all = next;
    }
    let mut keys = HashSet::new();
    for adjs in &all {
        let c = assemble_candidate(&cfg, &perm, &conns, adjs).unwrap();
        keys.insert(topology_key(&c.graph).unwrap());
    }
    FactorCount {
        label: format!("adjustments k={k}"),
        distinct: keys.len(),
        formula: to_u64(adjustment_factor(&cfg)),
    }
}

/// Pool-pair tuples of the library enumerator against the oracle, for
/// layouts whose full candidate space is too large to assemble.
pub fn count_pool_pairs(k: usize, m: usize, window: Option<usize>) -> FactorCount {
    let cfg = connections_only(k, m, window);
    let lib: BTreeSet<Vec<[usize; 2]>> = enumerate_connections(&cfg).collect();
    let oracle: BTreeSet<Vec<[usize; 2]>> =
        oracle_connection_tuples(&oracle_pools(m, cfg.num_blocks(), k, window)).into_iter().collect();
    assert_eq!(lib, oracle, "enumerator disagrees with oracle for k={k} m={m}");
    FactorCount {
        label: format!("pool pairs k={k} m={m} window={window:?}"),
        distinct: lib.len(),
        formula: to_u64(connection_factor(&cfg)),
    }
}

pub fn criterion6() -> Check {
    let t = Instant::now();
    let mut counts = Vec::new();
    for (k, m) in [(0, 2), (1, 2), (0, 3)] {
        counts.push(count_connections(k, m, None));
    }
    counts.push(count_connections(1, 2, Some(2)));
    for k in 0..=3 {
        counts.push(count_permutations(k));
        counts.push(count_adjustments(k));
    }
    let mut size_ok = true;
    for k in 0..=3 {
        for m in 2..=3 {
            let cfg = connections_only(k, m, None);
            let mut full = cfg.clone();
            full.search_permutation = true;
            full.enable_adjustments = true;
            size_ok &= space_size(&full) == permutation_factor(&full) * connection_factor(&full) * adjustment_factor(&full);
        }
    }
    let bad: Vec<String> = counts
        .iter()
        .filter(|c| !c.ok())
        .map(|c| format!("{}: {} vs {}", c.label, c.distinct, c.formula))
        .collect();
    let pass = bad.is_empty() && size_ok && t.elapsed() < Duration::from_secs(60);
    let detail = if bad.is_empty() {
        format!(
            "{} factor enumerations match (largest {}), space_size is their product; {:.2?}",
            counts.len(),
            counts.iter().map(|c| c.distinct).max().unwrap_or(0),
            t.elapsed()
        )
    } else {
        bad.join("; ")
    };
    Check::new(pass, detail)
}

// ---------------------------------------------------------------------------
// Structural properties of sampled candidates.

/// Spatial size at `level` for a `resolution` input.
pub fn side(resolution: u32, level: u8) -> u32 {
    resolution >> level
}

/// Walks a plan's stages from the parent's grid; `Err` names the problem.
pub fn plan_factor_ok(g: &BackboneGraph, resolution: u32) -> Result<(), String> {
    let idx = g.index();
    let cfg = ResampleConfig::of(g);
    for e in &g.edges {
        let (p, c) = (idx[&e.parent], idx[&e.child]);
        let plan = plan_for_edge(p, c, e.kind, &cfg).map_err(|err| err.to_string())?;
        let start = side(resolution, p.level.get());
        let mut h = start;
        for s in &plan.stages {
            match *s {
                ResampleStage::Upsample { factor } => h *= factor,
                ResampleStage::Conv3x3Stride2 { .. }
                | ResampleStage::Depthwise3x3Stride2 { .. }
                | ResampleStage::MaxPoolStride2 => {
                    if h % 2 != 0 {
                        return Err(format!("{}->{}: odd grid {h} before a stride-2 stage", p.id, c.id));
                    }
                    h /= 2;
                }
                ResampleStage::Proj1x1 { .. } | ResampleStage::ProjToTarget { .. } => {}
            }
        }
        let want = side(resolution, c.level.get());
        let delta = c.level.get() as i32 - p.level.get() as i32;
        let exact = if delta >= 0 {
            start == h << delta
        } else {
            h == start << (-delta)
        };
        if h != want || !exact {
            return Err(format!(
                "{}->{}: L{} {start} to L{} ends at {h}, expected {want}",
                p.id,
                c.id,
                p.level.get(),
                c.level.get()
            ));
        }
    }
    Ok(())
}

/// Intermediates (non-output permuted blocks) with no outgoing edge.
pub fn dangling(g: &BackboneGraph) -> usize {
    g.permuted
        .iter()
        .filter(|b| !b.is_output)
        .filter(|b| !g.edges.iter().any(|e| e.parent == b.id))
        .count()
}

fn same_topology(a: &BackboneGraph, b: &BackboneGraph) -> bool {
    a.edges == b.edges && a.permuted == b.permuted && a.stem == b.stem
}

/// Damage idempotence and the short/long parent partition.
pub fn damage_ok(g: &BackboneGraph) -> Result<(), String> {
    for mode in DamageMode::ALL {
        let once = apply_graph_damage(g, mode).map_err(|e| format!("{mode}: {e}"))?;
        let twice = apply_graph_damage(&once, mode).map_err(|e| format!("{mode} twice: {e}"))?;
        if !same_topology(&once, &twice) {
            return Err(format!("{mode} is not idempotent"));
        }
    }
    for metric in [GapMetric::Ordering, GapMetric::Level] {
        let short = kept_parents(g, DamageMode::RemoveShort, metric);
        let long = kept_parents(g, DamageMode::RemoveLong, metric);
        for b in &g.permuted {
            let parents: BTreeSet<_> = g.parents(b.id).into_iter().collect();
            if parents.len() != 2 {
                continue;
            }
            let s: BTreeSet<_> = short[&b.id].iter().copied().collect();
            let l: BTreeSet<_> = long[&b.id].iter().copied().collect();
            let union: BTreeSet<_> = s.union(&l).copied().collect();
            if s.len() != 1 || l.len() != 1 || !s.is_disjoint(&l) || union != parents {
                return Err(format!("block {}: {s:?} and {l:?} do not partition {parents:?}", b.id));
            }
        }
    }
    Ok(())
}

pub fn criterion7(samples: u64) -> Check {
    let cfg = SearchSpaceConfig::default();
    let mut failures = Vec::new();
    let mut edges = 0usize;
    for seed in 0..samples {
        let c = match sample_candidate(&cfg, &mut rng(seed)) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let g = &c.graph;
        edges += g.edges.len();
        let report = validate_graph(g);
        if !report.is_empty() {
            failures.push(format!("seed {seed}: {report}"));
        }
        if dangling(g) != 0 {
            failures.push(format!("seed {seed}: {} dangling intermediates", dangling(g)));
        }
        if let Err(e) = plan_factor_ok(g, 1024) {
            failures.push(format!("seed {seed}: {e}"));
        }
        if let Err(e) = damage_ok(g) {
            failures.push(format!("seed {seed}: {e}"));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{samples} samples valid, no dangling blocks, {edges} plans exact, damage idempotent and partitioning")
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    Check::new(pass, detail)
}

// ---------------------------------------------------------------------------
// Executor and per-layer oracle.

/// Multiply-adds and parameters of one record, from its op fields alone.
pub fn oracle_layer(r: &LayerRecord) -> (u64, u64) {
    let o = r.output;
    let i = r.input;
    let out_px = o.h as u64 * o.w as u64;
    match r.op {
        LayerOp::Conv {
            k,
            cin,
            cout,
            depthwise,
            bn,
            bias,
            ..
        } => {
            let (k, cin, cout) = (k as u64, cin as u64, cout as u64);
            let weights = if depthwise { k * k * cin } else { k * k * cin * cout };
            let extra = if bn { 2 * cout } else { 0 } + if bias { cout } else { 0 };
            (out_px * weights, weights + extra)
        }
        LayerOp::Deconv { k, cin, cout, bias, .. } => {
            let (k, cin, cout) = (k as u64, cin as u64, cout as u64);
            let weights = k * k * cin * cout;
            (i.h as u64 * i.w as u64 * weights, weights + if bias { cout } else { 0 })
        }
        LayerOp::Fc { inputs, outputs, bias } => {
            let w = inputs as u64 * outputs as u64;
            (w, w + if bias { outputs as u64 } else { 0 })
        }
    }
}

/// Totals from the lowered records: madds times multiplicity, parameters
/// once per distinct layer.
pub fn oracle_totals(m: &ModelWithHead, resolution: u32) -> (u64, u64) {
    let p = lower(m, resolution).unwrap();
    let mut seen = HashSet::new();
    let (mut madds, mut params) = (0u64, 0u64);
    for r in p.all_records() {
        let (ma, pa) = oracle_layer(r);
        madds += r.multiplicity * ma;
        if seen.insert(r.key) {
            params += pa;
        }
    }
    (madds, params)
}

/// Models exercised by the per-layer oracle: every zoo graph with each head
/// that fits it.
pub fn oracle_models() -> Vec<(ModelWithHead, u32)> {
    let mut out = Vec::new();
    for g in all_graphs() {
        out.push((ModelWithHead::backbone(g.clone()).unwrap(), 256));
        out.push((with_default_head(g.clone(), HeadKind::Retinanet).unwrap(), 640));
        out.push((with_default_head(g.clone(), HeadKind::Maskrcnn).unwrap(), 640));
        let cls = if g.name.starts_with("resnet") {
            HeadKind::FinalFeatureClassifier
        } else {
            HeadKind::Classifier
        };
        out.push((with_default_head(g, cls).unwrap(), 224));
    }
    out
}

pub fn bits(t: &ForwardOutput) -> Vec<u32> {
    t.pyramid
        .values()
        .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
        .chain(t.final_feature.data().iter().map(|v| v.to_bits()))
        .collect()
}

pub fn proxy49() -> BackboneGraph {
    make_proxy(&zoo().load("spinenet49").unwrap()).unwrap()
}

/// Forward shapes against shape inference for one graph; `Err` describes the
/// first difference.
pub fn shapes_match(g: &BackboneGraph, resolution: u32) -> Result<(), String> {
    let m = ModelWithHead::backbone(g.clone()).map_err(|e| e.to_string())?;
    let want = infer_shapes(g, resolution).map_err(|e| e.to_string())?;
    let out = forward(&m, &WeightStore::lazy(1), &random_input(resolution, 2)).map_err(|e| e.to_string())?;
    if out.block_shapes != want.blocks {
        return Err(format!("{} @{resolution}: block shapes differ", g.name));
    }
    let got: BTreeMap<u8, _> = out.pyramid.iter().map(|(&l, t)| (l, t.shape())).collect();
    if got != want.pyramid {
        return Err(format!("{} @{resolution}: pyramid {got:?} vs {:?}", g.name, want.pyramid));
    }
    if !out.pyramid.values().all(|t| t.is_finite()) {
        return Err(format!("{} @{resolution}: non-finite output", g.name));
    }
    Ok(())
}

/// Same forward pass with the edge list stored in reverse; must be bit-exact.
pub fn fusion_commutes(g: &BackboneGraph, resolution: u32) -> bool {
    let mut flipped = g.clone();
    flipped.edges.reverse();
    let x = random_input(resolution, 5);
    let w = WeightStore::lazy(9);
    let a = forward(&ModelWithHead::backbone(g.clone()).unwrap(), &w, &x).unwrap();
    let b = forward(&ModelWithHead::backbone(flipped).unwrap(), &w, &x).unwrap();
    bits(&a) == bits(&b)
}

pub fn softmax_error(model: &str, resolution: u32, seed: u64) -> f64 {
    let g = zoo().load(model).unwrap();
    let kind = if model.starts_with("resnet") {
        HeadKind::FinalFeatureClassifier
    } else {
        HeadKind::Classifier
    };
    let m = with_default_head(g, kind).unwrap();
    let w = init_weights(&m, resolution, seed).unwrap();
    let out = forward_classifier(&m, &w, &random_input(resolution, seed)).unwrap();
    let sum: f64 = out.probabilities.iter().map(|&p| p as f64).sum();
    (sum - 1.0).abs()
}

pub fn criterion8() -> Check {
    let t = Instant::now();
    let mut problems = Vec::new();
    let graphs = all_graphs();
    for g in &graphs {
        for r in [128, 256] {
            if let Err(e) = shapes_match(g, r) {
                problems.push(e);
            }
        }
    }
    let proxy = proxy49();
    let resnet = zoo().load("resnet50fpn").unwrap();
    for g in [&proxy, &resnet] {
        if !fusion_commutes(g, 128) {
            problems.push(format!("{}: fusion depends on edge order", g.name));
        }
    }
    let mut worst_softmax: f64 = 0.0;
    for (model, seed) in [("spinenet49", 1), ("resnet50fpn", 2)] {
        worst_softmax = worst_softmax.max(softmax_error(model, 128, seed));
    }
    if worst_softmax > 1e-6 {
        problems.push(format!("softmax sums off by {worst_softmax:e}"));
    }
    let m = ModelWithHead::backbone(proxy.clone()).unwrap();
    let x = random_input(128, 3);
    let a = forward(&m, &WeightStore::lazy(4), &x).unwrap();
    let b = forward(&m, &WeightStore::lazy(4), &x).unwrap();
    if bits(&a) != bits(&b) {
        problems.push("forward not deterministic".into());
    }
    let mut oracle_models_checked = 0;
    for (m, r) in oracle_models() {
        let c = count_model(&m, r).unwrap().grand_total;
        let (madds, params) = oracle_totals(&m, r);
        if (madds, params) != (c.madds, c.params) {
            problems.push(format!(
                "{} {:?}: oracle {madds}/{params} vs count_model {}/{}",
                m.name(),
                m.head.as_ref().map(|h| h.kind),
                c.madds,
                c.params
            ));
        }
        oracle_models_checked += 1;
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!(
            "{} models x 2 resolutions shape-exact; fusion bit-exact; softmax err {worst_softmax:.1e}; deterministic; \
             oracle exact on {oracle_models_checked} model/head pairs; {:.1?}",
            graphs.len(),
            t.elapsed()
        )
    } else {
        problems.join("; ")
    };
    Check::new(pass, detail)
}

// ---------------------------------------------------------------------------
// Search reproducibility.

pub fn evolution() -> ControllerKind {
    ControllerKind::Evolution(EvolutionConfig::default())
}

pub fn criterion9() -> Check {
    let cfg = SearchSpaceConfig::default();
    let reward = NegFlops::default();
    let mut problems = Vec::new();
    for controller in [ControllerKind::Random, evolution()] {
        let a = run_search(&cfg, controller, &reward, SearchOptions::new(64, 11)).unwrap();
        let b = run_search(&cfg, controller, &reward, SearchOptions::new(64, 11)).unwrap();
        let same_bits = a.rewards().iter().map(|r| r.to_bits()).eq(b.rewards().iter().map(|r| r.to_bits()));
        if a != b || !same_bits {
            problems.push(format!("{controller:?}: histories differ"));
        }
    }
    let t = Instant::now();
    let out = run_search(&cfg, evolution(), &reward, SearchOptions::new(200, 3)).unwrap();
    let elapsed = t.elapsed();
    let bsf = out.best_so_far();
    if !bsf.windows(2).all(|w| w[0] <= w[1]) {
        problems.push("best-so-far decreased".into());
    }
    if out.history.len() != 200 || elapsed >= Duration::from_secs(30) {
        problems.push(format!("budget-200 run: {} entries in {elapsed:.2?}", out.history.len()));
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!(
            "histories bit-identical; best-so-far monotone ({:.3e} -> {:.3e}); budget 200 in {elapsed:.2?}",
            bsf[0],
            bsf[bsf.len() - 1]
        )
    } else {
        problems.join("; ")
    };
    Check::new(pass, detail)
}
