//! Deterministic reference forward pass over a lowered model.
//!
//! Batch norm runs as the identity and biases are zero, so the output is a
//! pure function of the seed and the input. Intended for shape and wiring
//! checks on small inputs, not for speed.

mod ops;
mod tensor;
mod weights;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{BlockId, Shape};
use crate::head::{HeadKind, ModelWithHead};
use crate::layers::{lower, Act, Instr, LayerOp, Program};

pub use ops::{
    add_all, avg_pool, conv2d, depthwise2d, dense, global_avg_pool, max_pool, resize_nearest, softmax,
};
pub use tensor::{Tensor, DUMP_MAGIC};
pub use weights::{init_weights, WeightStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Swish,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecConfig {
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// P3..P7 (empty for models without a pyramid).
    pub pyramid: BTreeMap<u8, Tensor>,
    /// Output of the last stem block.
    pub final_feature: Tensor,
    /// Shape of every block output as computed.
    pub block_shapes: BTreeMap<BlockId, Shape>,
}

fn apply(act: Act, cfg: &ExecConfig, t: &mut Tensor) {
    match act {
        Act::None => {}
        Act::Main => match cfg.activation {
            Activation::Relu => t.data_mut().iter_mut().for_each(|v| *v = ops::relu(*v)),
            Activation::Swish => t.data_mut().iter_mut().for_each(|v| *v = ops::swish(*v)),
        },
        Act::Sigmoid => t.data_mut().iter_mut().for_each(|v| *v = ops::sigmoid(*v)),
    }
}

/// Runs a lowered program. Values are freed after their last use.
pub fn run_program(p: &Program, w: &WeightStore, x: &Tensor, cfg: &ExecConfig) -> Result<ForwardOutput> {
    if x.shape() != p.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "input {} but model expects {}",
            x.shape(),
            p.input_shape()
        )));
    }
    let n = p.nodes.len();
    let mut keep = vec![false; n];
    for &v in p.pyramid.values().chain(std::iter::once(&p.final_feature)) {
        keep[v] = true;
    }
    let mut last_use = vec![0usize; n];
    for (i, node) in p.nodes.iter().enumerate() {
        for v in node.instr.inputs() {
            last_use[v] = i;
        }
    }
    let block_of: BTreeMap<usize, BlockId> = p.block_outputs.iter().map(|(b, v)| (*v, *b)).collect();
    let mut block_shapes = BTreeMap::new();
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    for (i, node) in p.nodes.iter().enumerate() {
        let get = |v: usize| -> Result<&Tensor> {
            values[v]
                .as_ref()
                .ok_or_else(|| Error::Exec(format!("value {v} used after release")))
        };
        let mut y = match &node.instr {
            Instr::Input => x.clone(),
            Instr::Layer { layer, input, act } => {
                let rec = &p.records[*layer];
                let wt = w.get(rec);
                let xin = get(*input)?;
                let mut y = match rec.op {
                    LayerOp::Conv {
                        k, stride, depthwise, ..
                    } => {
                        if depthwise {
                            depthwise2d(xin, &wt, k, stride, node.shape)?
                        } else {
                            conv2d(xin, &wt, k, stride, node.shape)?
                        }
                    }
                    LayerOp::Fc { outputs, .. } => dense(xin, &wt, outputs)?,
                    LayerOp::Deconv { .. } => return Err(Error::Exec("transposed conv is cost-only".into())),
                };
                apply(*act, cfg, &mut y);
                y
            }
            Instr::MaxPool { input, k, stride } => max_pool(get(*input)?, *k, *stride, node.shape),
            Instr::Resize { input } => resize_nearest(get(*input)?, node.shape.h, node.shape.w),
            Instr::Add { inputs, act } => {
                let xs = inputs.iter().map(|&v| get(v)).collect::<Result<Vec<_>>>()?;
                let mut y = add_all(&xs)?;
                apply(*act, cfg, &mut y);
                y
            }
            Instr::Activate { input, act } => {
                let mut y = get(*input)?.clone();
                apply(*act, cfg, &mut y);
                y
            }
            Instr::GlobalPool { input } => global_avg_pool(get(*input)?),
            Instr::Gate { input, gate } => ops::gate(get(*input)?, get(*gate)?)?,
        };
        if y.shape() != node.shape {
            return Err(Error::ShapeMismatch(format!(
                "node {i} produced {}, expected {}",
                y.shape(),
                node.shape
            )));
        }
        if !y.is_finite() {
            let at = match node.owner {
                Some(b) => format!("block {b}"),
                None if i == 0 => "input".to_string(),
                None => format!("node {i} outside blocks"),
            };
            return Err(Error::NonFinite(at));
        }
        if let Some(b) = block_of.get(&i) {
            block_shapes.insert(*b, y.shape());
        }
        // Release inputs whose last consumer is this node.
        for v in node.instr.inputs() {
            if last_use[v] == i && !keep[v] {
                values[v] = None;
            }
        }
        if last_use[i] > i || keep[i] {
            values[i] = Some(std::mem::replace(&mut y, Tensor::zeros(Shape::square(0, 0))));
        }
    }
    let mut take = |v: usize| values[v].take().ok_or_else(|| Error::Exec(format!("missing output value {v}")));
    let mut pyramid = BTreeMap::new();
    for (&l, &v) in &p.pyramid {
        pyramid.insert(l, take(v)?);
    }
    let final_feature = take(p.final_feature)?;
    Ok(ForwardOutput {
        pyramid,
        final_feature,
        block_shapes,
    })
}

/// Square 3-channel input with values uniform in `[-1, 1]`, drawn from a
/// stream separate from any weight stream.
pub fn random_input(resolution: u32, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let shape = Shape::square(resolution, 3);
    let data = (0..shape.elements()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Forward pass at the input's resolution (square inputs only).
pub fn forward(m: &ModelWithHead, w: &WeightStore, x: &Tensor) -> Result<ForwardOutput> {
    forward_with(m, w, x, &ExecConfig::default())
}

pub fn forward_with(m: &ModelWithHead, w: &WeightStore, x: &Tensor, cfg: &ExecConfig) -> Result<ForwardOutput> {
    let s = x.shape();
    if s.h != s.w || s.c != 3 {
        return Err(Error::ShapeMismatch(format!("expected a square 3-channel input, got {s}")));
    }
    let p = lower(m, s.h)?;
    run_program(&p, w, x, cfg)
}

/// `(1/5) * sum_i U(P_i)` over P3..P7 with nearest upsampling onto P3, then
/// global average pooling.
pub fn pyramid_pool(pyramid: &BTreeMap<u8, Tensor>) -> Result<Vec<f32>> {
    let p3 = pyramid
        .get(&3)
        .ok_or_else(|| Error::Head("classifier needs P3".into()))?
        .shape();
    let mut acc = Tensor::zeros(p3);
    for l in 3..=7u8 {
        let p = pyramid
            .get(&l)
            .ok_or_else(|| Error::Head(format!("classifier needs P{l}")))?;
        if p.shape().c != p3.c {
            return Err(Error::ShapeMismatch(format!(
                "P{l} has {} channels, P3 has {}",
                p.shape().c,
                p3.c
            )));
        }
        let up = resize_nearest(p, p3.h, p3.w);
        for (a, &v) in acc.data_mut().iter_mut().zip(up.data()) {
            *a += v;
        }
    }
    acc.data_mut().iter_mut().for_each(|v| *v /= 5.0);
    Ok(global_avg_pool(&acc).into_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    /// Pooled feature vector fed to the linear classifier.
    pub features: Vec<f32>,
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
}

pub fn forward_classifier(m: &ModelWithHead, w: &WeightStore, x: &Tensor) -> Result<ClassifierOutput> {
    let kind = m.head.as_ref().map(|h| h.kind);
    if !kind.is_some_and(HeadKind::is_classifier) {
        return Err(Error::Head("model has no classifier head".into()));
    }
    let p = lower(m, x.shape().h)?;
    let out = run_program(&p, w, x, &ExecConfig::default())?;
    let features = if kind == Some(HeadKind::Classifier) {
        pyramid_pool(&out.pyramid)?
    } else {
        global_avg_pool(&out.final_feature).into_vec()
    };
    let rec = p
        .classifier_record()
        .ok_or_else(|| Error::Head("classifier layer missing".into()))?;
    let LayerOp::Fc { outputs, .. } = rec.op else {
        return Err(Error::Head("classifier layer is not fully connected".into()));
    };
    let fv = Tensor::from_vec(Shape::square(1, features.len() as u32), features.clone())?;
    let logits = dense(&fv, &w.get(rec), outputs)?.into_vec();
    let probabilities = softmax(&logits);
    Ok(ClassifierOutput {
        features,
        logits,
        probabilities,
    })
}
