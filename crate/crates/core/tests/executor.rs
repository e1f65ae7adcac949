mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use spine_core::ablation::{apply_graph_damage, DamageMode};
use spine_core::executor::{
    avg_pool, forward, forward_with, init_weights, pyramid_pool, random_input, resize_nearest, Activation,
    ExecConfig, Tensor, WeightStore, DUMP_MAGIC,
};
use spine_core::graph::{BackboneGraph, Shape, ValidationMode};
use spine_core::head::{HeadKind, ModelWithHead};
use spine_core::layers::lower;
use spine_core::resample::fuse;
use spine_core::zoo::with_default_head;
use spine_core::Error;

fn backbone(g: &BackboneGraph) -> ModelWithHead {
    ModelWithHead::backbone(g.clone()).unwrap()
}

#[test]
fn proxy_pyramid_at_128() {
    let out = forward(&backbone(&proxy49()), &WeightStore::lazy(0), &random_input(128, 0)).unwrap();
    let shape = |l: u8| out.pyramid[&l].shape();
    assert_eq!(shape(3), Shape::square(16, 256));
    assert_eq!(shape(7), Shape::square(1, 256));
    assert!(out.pyramid.values().all(Tensor::is_finite));
}

#[test]
fn forward_shapes_match_inference() {
    let z = zoo();
    for name in ["spinenet49", "r0sp53", "resnet50fpn", "spinenet49xs_mb"] {
        let g = z.load(name).unwrap();
        shapes_match(&g, 128).unwrap();
    }
    shapes_match(&proxy49(), 256).unwrap();
}

#[test]
fn forward_is_deterministic() {
    let m = backbone(&proxy49());
    let x = random_input(128, 1);
    let a = forward(&m, &init_weights(&m, 128, 7).unwrap(), &x).unwrap();
    let b = forward(&m, &WeightStore::lazy(7), &x).unwrap();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn fusion_is_order_independent() {
    assert!(fusion_commutes(&proxy49(), 128));
    assert!(fusion_commutes(&zoo().load("spinenet49xs_mb").unwrap(), 128));
    let a = random_input(16, 1);
    let b = random_input(16, 2);
    let ab = fuse(&a, &b).unwrap();
    let ba = fuse(&b, &a).unwrap();
    assert!(ab.data().iter().zip(ba.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(matches!(fuse(&a, &random_input(8, 1)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn softmax_sums_to_one() {
    for seed in 0..3 {
        let err = softmax_error("spinenet49", 128, seed);
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
    assert!(softmax_error("resnet50fpn", 64, 0) <= 1e-6);
}

#[test]
fn constant_pyramid_pools_to_the_constant() {
    let pyramid: BTreeMap<u8, Tensor> = (3..=7u8)
        .map(|l| (l, Tensor::filled(Shape::square(128 >> l, 4), 0.75)))
        .collect();
    let v = pyramid_pool(&pyramid).unwrap();
    assert_eq!(v.len(), 4);
    assert!(v.iter().all(|&x| (x - 0.75).abs() < 1e-6), "{v:?}");
}

#[test]
fn upsample_then_average_is_identity() {
    let x = random_input(8, 3);
    for f in [2u32, 4] {
        let up = resize_nearest(&x, 8 * f, 8 * f);
        let back = avg_pool(&up, f);
        assert_eq!(back.shape(), x.shape());
        assert!(back.max_abs_diff(&x) <= 1e-6, "factor {f}");
    }
}

#[test]
fn weight_store_covers_the_layer_set() {
    for (g, kind) in [("spinenet49", HeadKind::Retinanet), ("spinenet49s_mb", HeadKind::Classifier)] {
        let m = with_default_head(zoo().load(g).unwrap(), kind).unwrap();
        let w = init_weights(&m, 256, 1).unwrap();
        let stored: BTreeSet<_> = w.keys().copied().collect();
        let layers: BTreeSet<_> = lower(&m, 256).unwrap().all_records().map(|r| r.key).collect();
        assert_eq!(stored, layers, "{g}");
    }
}

#[test]
fn seeds_change_almost_every_layer() {
    let m = with_default_head(zoo().load("spinenet49").unwrap(), HeadKind::Retinanet).unwrap();
    let a = init_weights(&m, 256, 1).unwrap();
    let b = init_weights(&m, 256, 2).unwrap();
    let same = init_weights(&m, 256, 1).unwrap();
    let keys: Vec<_> = a.keys().copied().collect();
    let differing = keys.iter().filter(|k| a.layer(k) != b.layer(k)).count();
    assert!(differing * 100 >= keys.len() * 99, "{differing} of {}", keys.len());
    assert!(keys.iter().all(|k| a.layer(k) == same.layer(k)));
}

#[test]
fn zero_input_gives_zero_pyramid() {
    for g in [proxy49(), zoo().load("spinenet49xs_mb").unwrap()] {
        let m = backbone(&g);
        for activation in [Activation::Relu, Activation::Swish] {
            let x = Tensor::zeros(Shape::square(128, 3));
            let out = forward_with(&m, &WeightStore::lazy(3), &x, &ExecConfig { activation }).unwrap();
            assert!(out.pyramid.values().all(|t| t.data().iter().all(|&v| v == 0.0)), "{}", g.name);
        }
    }
}

#[test]
fn damage_changes_outputs_but_serialization_does_not() {
    let g = proxy49();
    let x = random_input(128, 4);
    let w = WeightStore::lazy(5);
    let base = forward(&backbone(&g), &w, &x).unwrap();
    let reloaded = BackboneGraph::from_json(&g.to_canonical_json().unwrap()).unwrap();
    assert_eq!(bits(&forward(&backbone(&reloaded), &w, &x).unwrap()), bits(&base));
    let damaged = apply_graph_damage(&g, DamageMode::Sequential).unwrap();
    let m = ModelWithHead::backbone_with(damaged, ValidationMode::Relaxed).unwrap();
    let out = forward(&m, &w, &x).unwrap();
    let delta = base
        .pyramid
        .iter()
        .map(|(l, t)| t.max_abs_diff(&out.pyramid[l]))
        .fold(0.0f32, f32::max);
    assert!(delta > 1e-6, "max change {delta}");
}

#[test]
fn raw_dump_round_trips() {
    let t = random_input(6, 8);
    let mut buf = Vec::new();
    t.write_raw(&mut buf).unwrap();
    assert_eq!(&buf[..8], DUMP_MAGIC);
    assert_eq!(Tensor::read_raw(buf.as_slice()).unwrap(), t);
    buf[0] ^= 1;
    assert!(Tensor::read_raw(buf.as_slice()).is_err());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = backbone(&proxy49());
    let p = lower(&m, 128).unwrap();
    let err = spine_core::executor::run_program(&p, &WeightStore::lazy(0), &random_input(64, 0), &ExecConfig::default());
    assert!(matches!(err, Err(Error::ShapeMismatch(_))));
}
