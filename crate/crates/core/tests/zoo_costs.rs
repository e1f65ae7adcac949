mod common;

use std::collections::BTreeSet;

use common::*;
use spine_core::cost::{compare_models, count_model, golden_table};
use spine_core::graph::{infer_shapes, to_dot, validate_graph, BlockKind, EdgeKind};
use spine_core::head::{attach_head, HeadKind, ModelWithHead};
use spine_core::layers::{lower, LayerOp};
use spine_core::resample::{plan_for_edge, ResampleConfig, ResampleStage};
use spine_core::search::{make_proxy, proxy_head};
use spine_core::zoo::VariantId;
use spine_core::Error;

fn tolerance(table: &str) -> f64 {
    match table {
        "table3" => 0.10,
        "table7" => 0.08,
        _ => 0.05,
    }
}

#[test]
fn golden_files_carry_the_published_numbers() {
    let mut expected = 0;
    for &(table, model, res, head, madds, params) in PUBLISHED {
        let t = golden_table(table).unwrap();
        let row = t
            .rows
            .iter()
            .find(|r| r.model == model && r.resolution == res && r.head == head)
            .unwrap_or_else(|| panic!("{table} lacks {model}@{res}"));
        assert_eq!(row.madds, madds, "{model}@{res}");
        assert_eq!(row.params, params, "{model}@{res}");
        assert_eq!(row.tolerance, tolerance(table));
        expected += 1;
    }
    let total: usize = ["table2", "table3", "table4", "table7"]
        .iter()
        .map(|t| golden_table(t).unwrap().rows.len())
        .sum();
    assert_eq!(total, expected);
}

#[test]
fn every_golden_row_is_within_tolerance() {
    for table in ["table2", "table3", "table4", "table7"] {
        for (c, _) in golden_rows(table) {
            assert!(c.pass, "{table} {}@{}: {:?}", c.model, c.resolution, c);
        }
    }
}

#[test]
fn unknown_golden_table_is_an_error() {
    assert!(matches!(golden_table("table9"), Err(Error::Load { .. })));
}

#[test]
fn r0sp53_costs_more_than_spinenet49() {
    let c = criterion2();
    assert!(c.pass, "{}", c.detail);
    let z = zoo();
    let reports: Vec<_> = ["spinenet49", "r0sp53"]
        .iter()
        .map(|m| count_model(&z.model(m, HeadKind::Retinanet).unwrap(), 640).unwrap())
        .collect();
    let cmp = compare_models(&reports).unwrap();
    assert_eq!(cmp.rows.len(), 2);
}

#[test]
fn small_variant_params_ratio() {
    let z = zoo();
    let params = |m: &str| count_model(&z.model(m, HeadKind::Retinanet).unwrap(), 640).unwrap().grand_total.params;
    let ratio = params("spinenet49s") as f64 / params("spinenet49") as f64;
    let published = 11.9 / 28.5;
    assert!((ratio / published - 1.0).abs() < 0.05, "{ratio} vs {published}");
}

#[test]
fn proxy_backbone_is_an_order_of_magnitude_cheaper() {
    let g = zoo().load("spinenet49").unwrap();
    let cost = |g| count_model(&ModelWithHead::backbone(g).unwrap(), 512).unwrap().grand_total.madds;
    let full = cost(g.clone());
    let small = cost(make_proxy(&g).unwrap());
    assert!(small * 10 < full, "{small} vs {full}");
    // The proxy head is cheaper too, though its class layer keeps its outputs.
    let with_head = count_model(&attach_head(make_proxy(&g).unwrap(), proxy_head()).unwrap(), 512).unwrap();
    let full_head = count_model(&zoo().model("spinenet49", HeadKind::Retinanet).unwrap(), 512).unwrap();
    assert!(with_head.head_total.madds < full_head.head_total.madds);
}

fn quarter(w: u32) -> u32 {
    ((w as f64 / 4.0 + 0.5).floor() as u32).max(1)
}

#[test]
fn proxy_keeps_topology_and_rounds_widths() {
    let g = zoo().load("spinenet49").unwrap();
    let p = make_proxy(&g).unwrap();
    let pp = make_proxy(&p).unwrap();
    assert_eq!(p.edges, g.edges);
    assert_eq!(p.block_count(), g.block_count());
    for ((a, b), c) in g.blocks().zip(p.blocks()).zip(pp.blocks()) {
        assert_eq!((a.id, a.level, a.kind, a.is_output), (b.id, b.level, b.kind, b.is_output));
        assert_eq!(b.width, quarter(a.width));
        assert_eq!(c.width, quarter(quarter(a.width)));
    }
    assert_eq!(p.alpha, 0.25);
}

#[test]
fn repeats_scale_the_base() {
    let z = zoo();
    let base = z.load("spinenet49").unwrap();
    for (name, k) in [("spinenet96", 2), ("spinenet143", 3), ("spinenet190", 4)] {
        let g = z.load(name).unwrap();
        assert_eq!(g.block_count(), base.block_count());
        assert_eq!(g.edges, base.edges);
        for (a, b) in base.blocks().zip(g.blocks()) {
            assert_eq!(b.repeat, a.repeat * k, "{name} block {}", a.id);
        }
        assert_eq!(g.expanded_block_count(), base.expanded_block_count() * k as u64);
    }
}

#[test]
fn spinenet49_mixes_block_types() {
    let g = zoo().load("spinenet49").unwrap();
    let kinds: BTreeSet<_> = g.permuted.iter().map(|b| b.kind).collect();
    assert!(kinds.contains(&BlockKind::Bottleneck) && kinds.contains(&BlockKind::Residual));
}

#[test]
fn mobile_models_resample_without_dense_3x3() {
    for v in VariantId::ALL.into_iter().filter(|v| v.is_mobile()) {
        let g = zoo().build_variant(v).unwrap();
        assert!(g.permuted.iter().all(|b| b.kind == BlockKind::Mbconv), "{v}");
        let idx = g.index();
        let cfg = ResampleConfig::of(&g);
        for e in &g.edges {
            let plan = plan_for_edge(idx[&e.parent], idx[&e.child], e.kind, &cfg).unwrap();
            assert!(
                !plan.stages.iter().any(|s| matches!(s, ResampleStage::Conv3x3Stride2 { .. })),
                "{v}: {}->{}",
                e.parent,
                e.child
            );
        }
    }
}

#[test]
fn zoo_graphs_validate_and_infer() {
    for g in all_graphs() {
        assert!(validate_graph(&g).is_empty(), "{}", g.name);
        let s = infer_shapes(&g, 640).unwrap();
        assert_eq!(s.pyramid.len(), 5, "{}", g.name);
        for (&l, shape) in &s.pyramid {
            assert_eq!((shape.h, shape.c), (640 >> l, g.output_dim), "{} P{l}", g.name);
        }
        assert!(plan_factor_ok(&g, 1280).is_ok(), "{}: {:?}", g.name, plan_factor_ok(&g, 1280));
    }
}

#[test]
fn spinenet49_dot_edges() {
    let g = zoo().load("spinenet49").unwrap();
    let connections = g.edges.iter().filter(|e| e.kind == EdgeKind::Connection).count();
    assert_eq!(connections, 2 * 15);
    let orphans = g
        .permuted
        .iter()
        .filter(|b| !b.is_output)
        .filter(|b| !g.edges.iter().any(|e| e.parent == b.id && e.kind == EdgeKind::Connection))
        .count();
    let dot = to_dot(&g);
    assert_eq!(dot.matches(" -> ").count(), 30 + orphans + (g.stem.len() - 1));
    assert_eq!(dot.matches("[label=").count(), g.block_count());
}

#[test]
fn doubling_resolution_quadruples_conv_madds() {
    for g in all_graphs() {
        let name = g.name.clone();
        let m = ModelWithHead::backbone(g).unwrap();
        let a = lower(&m, 640).unwrap();
        let b = lower(&m, 1280).unwrap();
        assert_eq!(a.records.len(), b.records.len(), "{name}");
        let (mut conv_a, mut conv_b) = (0u64, 0u64);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.key, y.key);
            let (ma, pa) = oracle_layer(x);
            let (mb, pb) = oracle_layer(y);
            assert_eq!(pa, pb, "{name} {}", x.key);
            if matches!(x.op, LayerOp::Fc { .. }) {
                assert_eq!(ma, mb, "{name} {}", x.key);
            } else {
                assert_eq!(mb, 4 * ma, "{name} {}", x.key);
                conv_a += ma;
                conv_b += mb;
            }
        }
        assert_eq!(conv_b, 4 * conv_a);
        let has_fc = a.records.iter().any(|r| matches!(r.op, LayerOp::Fc { .. }));
        let ta = count_model(&m, 640).unwrap().grand_total;
        let tb = count_model(&m, 1280).unwrap().grand_total;
        assert_eq!(tb.params, ta.params, "{name}");
        if !has_fc {
            assert_eq!(tb.madds, 4 * ta.madds, "{name}");
        }
    }
}

#[test]
fn per_layer_oracle_matches_count_model() {
    for (m, r) in oracle_models() {
        let c = count_model(&m, r).unwrap().grand_total;
        assert_eq!(oracle_totals(&m, r), (c.madds, c.params), "{} {:?}", m.name(), m.head);
    }
}

#[test]
fn unknown_model_is_reported() {
    assert!(matches!(zoo().load("nosuch"), Err(Error::UnknownModel(_))));
    assert!(matches!(zoo().model("spinenet49", HeadKind::Retinanet), Ok(_)));
}
