//! Cross-scale resampling between a parent block and a target block.
//!
//! Dense regime: a 1x1 projection to `alpha * C`, then either a nearest
//! upsample or one stride-2 3x3 conv followed by max-pools, then a 1x1
//! projection to the target's `C^in`. The separable regime (mobile models)
//! drops the first projection and downsamples with one depthwise stride-2 3x3
//! conv per level; together with the final 1x1 the last step is a separable
//! conv.

use std::fmt;

use crate::executor::Tensor;
use crate::cost::Cost;
use crate::graph::{AlphaBase, BackboneGraph, BlockSpec, EdgeKind, ResampleRegime, Shape, StageRecord};
use crate::error::{Error, Result};

/// Channel scaling shared by every edge of a graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleConfig {
    pub alpha: f64,
    pub base: AlphaBase,
    pub regime: ResampleRegime,
}

impl ResampleConfig {
    pub fn dense(alpha: f64) -> Self {
        Self {
            alpha,
            base: AlphaBase::Parent,
            regime: ResampleRegime::Dense,
        }
    }

    pub fn of(g: &BackboneGraph) -> Self {
        Self {
            alpha: g.alpha,
            base: g.alpha_base,
            regime: g.regime,
        }
    }

    pub fn with_base(self, base: AlphaBase) -> Self {
        Self { base, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleStage {
    /// 1x1 conv to the alpha-scaled width.
    Proj1x1 { in_ch: u32, out_ch: u32 },
    /// Nearest-neighbour upsample by `factor` (a power of two).
    Upsample { factor: u32 },
    /// Dense stride-2 3x3 conv.
    Conv3x3Stride2 { in_ch: u32, out_ch: u32 },
    /// Depthwise stride-2 3x3 conv (separable regime).
    Depthwise3x3Stride2 { ch: u32 },
    /// 3x3 stride-2 max-pool.
    MaxPoolStride2,
    /// 1x1 conv to the target's input width.
    ProjToTarget { in_ch: u32, out_ch: u32 },
}

impl ResampleStage {
    pub fn name(&self) -> &'static str {
        match self {
            ResampleStage::Proj1x1 { .. } => "proj_1x1",
            ResampleStage::Upsample { .. } => "nearest_upsample",
            ResampleStage::Conv3x3Stride2 { .. } => "conv3x3_stride2",
            ResampleStage::Depthwise3x3Stride2 { .. } => "dwconv3x3_stride2",
            ResampleStage::MaxPoolStride2 => "maxpool_stride2",
            ResampleStage::ProjToTarget { .. } => "proj_to_target",
        }
    }

    /// log2 of the spatial reduction of this stage (negative for upsampling).
    pub fn level_step(&self) -> i32 {
        match *self {
            ResampleStage::Upsample { factor } => -(factor.trailing_zeros() as i32),
            ResampleStage::Conv3x3Stride2 { .. }
            | ResampleStage::Depthwise3x3Stride2 { .. }
            | ResampleStage::MaxPoolStride2 => 1,
            _ => 0,
        }
    }

    /// (input, output) channels, `None` for channel-agnostic stages.
    pub fn channels(&self) -> Option<(u32, u32)> {
        match *self {
            ResampleStage::Proj1x1 { in_ch, out_ch }
            | ResampleStage::Conv3x3Stride2 { in_ch, out_ch }
            | ResampleStage::ProjToTarget { in_ch, out_ch } => Some((in_ch, out_ch)),
            ResampleStage::Depthwise3x3Stride2 { ch } => Some((ch, ch)),
            _ => None,
        }
    }
}

impl fmt::Display for ResampleStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ResampleStage::Upsample { factor } => write!(f, "upsample x{factor}"),
            ResampleStage::MaxPoolStride2 => f.write_str("maxpool s2"),
            s => {
                let (i, o) = s.channels().unwrap_or_default();
                write!(f, "{} {i}->{o}", s.name())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResamplePlan {
    pub parent_level: u8,
    pub target_level: u8,
    pub in_channels: u32,
    pub out_channels: u32,
    pub stages: Vec<ResampleStage>,
}

impl ResamplePlan {
    /// Net number of halvings across all stages; equals
    /// `target_level - parent_level` for a well-formed plan.
    pub fn net_level_step(&self) -> i32 {
        self.stages.iter().map(ResampleStage::level_step).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stage_records(&self) -> Vec<StageRecord> {
        let mut level = self.parent_level as i32;
        self.stages
            .iter()
            .map(|s| {
                level += s.level_step();
                let ch = s.channels();
                StageRecord {
                    op: s.name().to_string(),
                    in_ch: ch.map(|c| c.0),
                    out_ch: ch.map(|c| c.1),
                    level: level as u8,
                }
            })
            .collect()
    }
}

/// `round_half_up(alpha * c)`, never below 1.
pub fn alpha_channels(c: u32, alpha: f64) -> u32 {
    ((c as f64 * alpha + 0.5).floor() as u32).max(1)
}

pub fn plan_resample(parent: &BlockSpec, target: &BlockSpec, cfg: &ResampleConfig) -> Result<ResamplePlan> {
    if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::BadAlpha(cfg.alpha));
    }
    if parent.ordering >= target.ordering {
        return Err(Error::NotPrecedes {
            parent: parent.id,
            parent_ordering: parent.ordering,
            target: target.id,
            target_ordering: target.ordering,
        });
    }
    let (pl, tl) = (parent.level.get(), target.level.get());
    let c_in = parent.io_channels();
    let c_out = target.io_channels();
    let mut stages = Vec::new();
    let mut ch = c_in;
    match cfg.regime {
        ResampleRegime::Dense => {
            let base = match cfg.base {
                AlphaBase::Parent => parent.width,
                AlphaBase::Target => target.width,
            };
            let a = alpha_channels(base, cfg.alpha);
            stages.push(ResampleStage::Proj1x1 { in_ch: ch, out_ch: a });
            ch = a;
            if pl > tl {
                stages.push(ResampleStage::Upsample {
                    factor: 1 << (pl - tl),
                });
            } else if pl < tl {
                stages.push(ResampleStage::Conv3x3Stride2 { in_ch: ch, out_ch: ch });
                for _ in 1..(tl - pl) {
                    stages.push(ResampleStage::MaxPoolStride2);
                }
            }
        }
        ResampleRegime::Separable => {
            if pl > tl {
                stages.push(ResampleStage::Upsample {
                    factor: 1 << (pl - tl),
                });
            }
            for _ in pl..tl {
                stages.push(ResampleStage::Depthwise3x3Stride2 { ch });
            }
        }
    }
    stages.push(ResampleStage::ProjToTarget { in_ch: ch, out_ch: c_out });
    Ok(ResamplePlan {
        parent_level: pl,
        target_level: tl,
        in_channels: c_in,
        out_channels: c_out,
        stages,
    })
}

/// An orphan edge joins blocks at the same level: identity when the widths
/// agree, otherwise a single 1x1 projection.
pub fn plan_orphan(parent: &BlockSpec, target: &BlockSpec) -> Result<ResamplePlan> {
    if parent.level != target.level {
        return Err(Error::ShapeMismatch(format!(
            "orphan edge {} -> {} crosses levels",
            parent.id, target.id
        )));
    }
    let (c_in, c_out) = (parent.io_channels(), target.io_channels());
    let stages = if c_in == c_out {
        Vec::new()
    } else {
        vec![ResampleStage::ProjToTarget { in_ch: c_in, out_ch: c_out }]
    };
    Ok(ResamplePlan {
        parent_level: parent.level.get(),
        target_level: target.level.get(),
        in_channels: c_in,
        out_channels: c_out,
        stages,
    })
}

pub fn plan_for_edge(parent: &BlockSpec, target: &BlockSpec, kind: EdgeKind, cfg: &ResampleConfig) -> Result<ResamplePlan> {
    match kind {
        EdgeKind::Connection => plan_resample(parent, target, cfg),
        EdgeKind::Orphan => plan_orphan(parent, target),
    }
}

fn conv_cost(h: u32, w: u32, k: u32, cin: u32, cout: u32) -> Cost {
    let (h, w, k, cin, cout) = (h as u64, w as u64, k as u64, cin as u64, cout as u64);
    Cost {
        madds: h * w * k * k * cin * cout,
        params: k * k * cin * cout + 2 * cout,
    }
}

/// Multiply-adds and parameters of a plan. Every conv carries batch norm
/// (2 parameters per output channel); pooling and upsampling are free.
pub fn resample_cost(plan: &ResamplePlan, parent_shape: Shape, target_shape: Shape) -> Result<Cost> {
    let (mut h, mut w, mut c) = (parent_shape.h, parent_shape.w, parent_shape.c);
    let mut total = Cost::ZERO;
    for (i, stage) in plan.stages.iter().enumerate() {
        let mismatch = |detail: String| Error::StageMismatch {
            stage: i,
            name: stage.name(),
            detail,
        };
        if let Some((cin, _)) = stage.channels() {
            if cin != c {
                return Err(mismatch(format!("expects {cin} input channels, got {c}")));
            }
        }
        match *stage {
            ResampleStage::Proj1x1 { in_ch, out_ch } | ResampleStage::ProjToTarget { in_ch, out_ch } => {
                total += conv_cost(h, w, 1, in_ch, out_ch);
                c = out_ch;
            }
            ResampleStage::Upsample { factor } => {
                if !factor.is_power_of_two() {
                    return Err(Error::NonPowerOfTwoUpsample(factor));
                }
                // Nearest resize onto the target grid, which may be up to
                // factor-1 pixels larger when the input is not a multiple of 2^7.
                let fits = |from: u32, to: u32| from * factor <= to && to < (from + 1) * factor;
                if !fits(h, target_shape.h) || !fits(w, target_shape.w) {
                    return Err(mismatch(format!("cannot upsample {h}x{w} by {factor} onto {target_shape}")));
                }
                h = target_shape.h;
                w = target_shape.w;
            }
            ResampleStage::Conv3x3Stride2 { in_ch, out_ch } => {
                h /= 2;
                w /= 2;
                total += conv_cost(h, w, 3, in_ch, out_ch);
                c = out_ch;
            }
            ResampleStage::Depthwise3x3Stride2 { ch } => {
                h /= 2;
                w /= 2;
                let (hh, ww, cc) = (h as u64, w as u64, ch as u64);
                total += Cost {
                    madds: hh * ww * 9 * cc,
                    params: 9 * cc + 2 * cc,
                };
            }
            ResampleStage::MaxPoolStride2 => {
                h /= 2;
                w /= 2;
            }
        }
    }
    let got = Shape { h, w, c };
    if got != target_shape {
        return Err(Error::StageMismatch {
            stage: plan.stages.len(),
            name: "output",
            detail: format!("plan produces {got}, target expects {target_shape}"),
        });
    }
    Ok(total)
}

/// Element-wise sum of two resampled inputs.
pub fn fuse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "fuse {} + {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::testutil::block;
    use crate::graph::{BlockKind, BlockSpec};

    fn at(b: BlockSpec, ordering: u32) -> BlockSpec {
        BlockSpec { ordering, ..b }
    }

    fn target_cfg(alpha: f64) -> ResampleConfig {
        ResampleConfig::dense(alpha).with_base(AlphaBase::Target)
    }

    #[test]
    fn upsample_plan_from_l5_bottleneck_to_l3_residual() {
        let p = at(block(1, 5, BlockKind::Bottleneck, 256, false), 1);
        let t = at(block(2, 3, BlockKind::Residual, 128, false), 2);
        let plan = plan_resample(&p, &t, &target_cfg(0.5)).unwrap();
        assert_eq!(
            plan.stages,
            vec![
                ResampleStage::Proj1x1 { in_ch: 1024, out_ch: 64 },
                ResampleStage::Upsample { factor: 4 },
                ResampleStage::ProjToTarget { in_ch: 64, out_ch: 128 },
            ]
        );
        assert_eq!(plan.net_level_step(), -2);
    }

    #[test]
    fn downsample_plan_uses_one_conv_then_pools() {
        let p = at(block(1, 3, BlockKind::Bottleneck, 128, false), 1);
        let t = at(block(2, 5, BlockKind::Bottleneck, 256, false), 2);
        let plan = plan_resample(&p, &t, &target_cfg(0.5)).unwrap();
        assert_eq!(
            plan.stages,
            vec![
                ResampleStage::Proj1x1 { in_ch: 512, out_ch: 128 },
                ResampleStage::Conv3x3Stride2 { in_ch: 128, out_ch: 128 },
                ResampleStage::MaxPoolStride2,
                ResampleStage::ProjToTarget { in_ch: 128, out_ch: 1024 },
            ]
        );
    }

    #[test]
    fn same_level_plan_is_two_projections() {
        let p = at(block(1, 4, BlockKind::Residual, 64, false), 1);
        let t = at(block(2, 4, BlockKind::Residual, 64, false), 2);
        let plan = plan_resample(&p, &t, &target_cfg(1.0)).unwrap();
        assert_eq!(
            plan.stages,
            vec![
                ResampleStage::Proj1x1 { in_ch: 64, out_ch: 64 },
                ResampleStage::ProjToTarget { in_ch: 64, out_ch: 64 },
            ]
        );
    }

    #[test]
    fn rejects_bad_alpha_and_backward_edges() {
        let p = at(block(1, 4, BlockKind::Residual, 64, false), 1);
        let t = at(block(2, 4, BlockKind::Residual, 64, false), 2);
        assert!(matches!(plan_resample(&p, &t, &ResampleConfig::dense(0.0)), Err(Error::BadAlpha(_))));
        assert!(matches!(
            plan_resample(&t, &p, &ResampleConfig::dense(0.5)),
            Err(Error::NotPrecedes { .. })
        ));
    }

    #[test]
    fn single_projection_cost() {
        let plan = ResamplePlan {
            parent_level: 3,
            target_level: 3,
            in_channels: 64,
            out_channels: 128,
            stages: vec![ResampleStage::ProjToTarget { in_ch: 64, out_ch: 128 }],
        };
        let c = resample_cost(&plan, Shape::square(80, 64), Shape::square(80, 128)).unwrap();
        assert_eq!(c.madds, 52_428_800);
    }

    #[test]
    fn empty_plan_is_free() {
        let plan = ResamplePlan {
            parent_level: 3,
            target_level: 3,
            in_channels: 64,
            out_channels: 64,
            stages: vec![],
        };
        let c = resample_cost(&plan, Shape::square(80, 64), Shape::square(80, 64)).unwrap();
        assert_eq!(c, Cost::ZERO);
    }

    #[test]
    fn stage_mismatch_names_stage() {
        let plan = ResamplePlan {
            parent_level: 3,
            target_level: 3,
            in_channels: 64,
            out_channels: 64,
            stages: vec![
                ResampleStage::Proj1x1 { in_ch: 64, out_ch: 32 },
                ResampleStage::ProjToTarget { in_ch: 16, out_ch: 64 },
            ],
        };
        match resample_cost(&plan, Shape::square(8, 64), Shape::square(8, 64)) {
            Err(Error::StageMismatch { stage, name, .. }) => {
                assert_eq!(stage, 1);
                assert_eq!(name, "proj_to_target");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separable_regime_has_no_dense_convs() {
        let p = at(block(1, 2, BlockKind::Mbconv, 24, false), 1);
        let t = at(block(2, 5, BlockKind::Mbconv, 112, false), 2);
        let cfg = ResampleConfig {
            regime: ResampleRegime::Separable,
            ..ResampleConfig::dense(0.5)
        };
        let plan = plan_resample(&p, &t, &cfg).unwrap();
        assert_eq!(plan.stages.len(), 4);
        assert!(plan
            .stages
            .iter()
            .all(|s| !matches!(s, ResampleStage::Conv3x3Stride2 { .. } | ResampleStage::Proj1x1 { .. })));
        assert_eq!(plan.net_level_step(), 3);
    }
}
