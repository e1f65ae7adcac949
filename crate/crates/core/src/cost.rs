//! Multiply-add and parameter accounting.
//!
//! Conventions:
//! - convs count `H_out * W_out * k^2 * C_in * C_out` madds, depthwise convs
//!   `H_out * W_out * k^2 * C`, fully-connected layers `in * out`; the
//!   transposed conv of the mask branch counts on its input grid;
//! - normalization, activations, pooling, resizing and additions are free;
//! - parameters are weights, plus 2 per output channel for batch-normalized
//!   convs, plus biases on prediction, FPN and fully-connected layers only;
//! - head weights shared across pyramid levels are counted once, their madds
//!   once per level.
//!
//! This is the analytic counter. [`crate::layers::lower`] produces an
//! independent per-layer inventory of the same model; the two must agree.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, BackboneGraph, BlockId, BlockKind, BlockSpec, Decoder, MbConvParams, Shape, OUTPUT_LEVELS};
use crate::head::{HeadConfig, HeadKind, ModelWithHead};
use crate::resample::{plan_for_edge, resample_cost, ResampleConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cost {
    pub madds: u64,
    pub params: u64,
}

impl Cost {
    pub const ZERO: Cost = Cost { madds: 0, params: 0 };

    pub fn new(madds: u64, params: u64) -> Self {
        Self { madds, params }
    }

    /// Same weights applied `n` times.
    pub fn repeated(self, n: u64) -> Self {
        Self {
            madds: self.madds * n,
            params: self.params,
        }
    }

    pub fn madds_only(self) -> Self {
        Self { params: 0, ..self }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            madds: self.madds + o.madds,
            params: self.params + o.params,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(it: I) -> Cost {
        it.fold(Cost::ZERO, Add::add)
    }
}

fn u(x: u32) -> u64 {
    x as u64
}

/// k x k conv producing an `h x w` map.
pub fn conv(h: u32, w: u32, k: u32, cin: u32, cout: u32, bn: bool, bias: bool) -> Cost {
    let weights = u(k) * u(k) * u(cin) * u(cout);
    Cost {
        madds: u(h) * u(w) * weights,
        params: weights + if bn { 2 * u(cout) } else { 0 } + if bias { u(cout) } else { 0 },
    }
}

pub fn depthwise(h: u32, w: u32, k: u32, c: u32, bn: bool) -> Cost {
    Cost {
        madds: u(h) * u(w) * u(k) * u(k) * u(c),
        params: u(k) * u(k) * u(c) + if bn { 2 * u(c) } else { 0 },
    }
}

pub fn fc(inputs: u32, outputs: u32, bias: bool) -> Cost {
    Cost {
        madds: u(inputs) * u(outputs),
        params: u(inputs) * u(outputs) + if bias { u(outputs) } else { 0 },
    }
}

/// Input of the first copy of a block chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockInput {
    pub channels: u32,
    pub h: u32,
    pub w: u32,
}

/// Squeeze width of an MBConv block with `cin` input channels.
pub fn se_width(cin: u32, ratio: f64) -> u32 {
    ((cin as f64 * ratio).floor() as u32).max(1)
}

fn block_copy(kind: BlockKind, width: u32, cin: u32, hin: (u32, u32), hout: (u32, u32), stride: u32, mb: &MbConvParams) -> Cost {
    let (h, w) = hout;
    let cout = kind.io_channels(width);
    let shortcut = if cin != cout || stride != 1 {
        conv(h, w, 1, cin, cout, true, false)
    } else {
        Cost::ZERO
    };
    match kind {
        BlockKind::Bottleneck => {
            conv(hin.0, hin.1, 1, cin, width, true, false)
                + conv(h, w, 3, width, width, true, false)
                + conv(h, w, 1, width, cout, true, false)
                + shortcut
        }
        BlockKind::Residual => conv(h, w, 3, cin, width, true, false) + conv(h, w, 3, width, width, true, false) + shortcut,
        BlockKind::Mbconv => {
            let e = cin * mb.expansion;
            let expand = if mb.expansion > 1 {
                conv(hin.0, hin.1, 1, cin, e, true, false)
            } else {
                Cost::ZERO
            };
            let r = se_width(cin, mb.se_ratio);
            expand
                + depthwise(h, w, mb.kernel, e, true)
                + fc(e, r, true)
                + fc(r, e, true)
                + conv(h, w, 1, e, cout, true, false)
        }
    }
}

/// Cost of a block chain whose first copy reads `input` and strides down to
/// `out` (later copies map `C^out -> C^out` at `out`).
pub fn count_block_from(b: &BlockSpec, input: BlockInput, out: Shape, stride: u32, mb: &MbConvParams) -> Result<Cost> {
    if b.width == 0 {
        return Err(Error::BadBlock {
            block: b.id,
            detail: "width must be >= 1".into(),
        });
    }
    if b.repeat == 0 {
        return Err(Error::BadRepeat(0));
    }
    if out.c != b.io_channels() {
        return Err(Error::ShapeMismatch(format!(
            "block {} outputs {} channels, shape says {}",
            b.id,
            b.io_channels(),
            out.c
        )));
    }
    let first = block_copy(b.kind, b.width, input.channels, (input.h, input.w), (out.h, out.w), stride, mb);
    let rest = block_copy(b.kind, b.width, out.c, (out.h, out.w), (out.h, out.w), 1, mb);
    Ok(first + Cost::new(rest.madds * u(b.repeat - 1), rest.params * u(b.repeat - 1)))
}

/// Cost of a scale-permuted block: input is the fused map at its own shape.
pub fn count_block(b: &BlockSpec, shape: Shape, mb: &MbConvParams) -> Result<Cost> {
    count_block_from(
        b,
        BlockInput {
            channels: shape.c,
            h: shape.h,
            w: shape.w,
        },
        shape,
        1,
        mb,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub head: Option<HeadKind>,
    pub resolution: u32,
    pub entry: Cost,
    pub per_block: BTreeMap<BlockId, Cost>,
    /// Entry layers and stem blocks.
    pub stem_total: Cost,
    pub permuted_total: Cost,
    pub resample_total: Cost,
    /// Output projections or FPN.
    pub decoder_total: Cost,
    pub head_total: Cost,
    pub grand_total: Cost,
}

impl CostReport {
    pub fn backbone_total(&self) -> Cost {
        self.stem_total + self.permuted_total + self.resample_total + self.decoder_total
    }
}

fn entry_cost(g: &BackboneGraph, r: u32) -> Cost {
    let e = &g.entry;
    let h = r >> 1;
    conv(h, h, e.kernel, 3, e.width, true, false)
}

pub fn head_cost(h: &HeadConfig, g: &BackboneGraph, r: u32) -> Cost {
    let od = g.output_dim;
    match h.kind {
        HeadKind::Retinanet => {
            let mut total = Cost::ZERO;
            for (i, l) in OUTPUT_LEVELS.into_iter().enumerate() {
                let s = r >> l;
                let mut level = Cost::ZERO;
                for outputs in [h.anchors_per_location * h.num_classes, h.anchors_per_location * 4] {
                    let mut ci = od;
                    for _ in 0..h.shared_conv_layers {
                        level += if h.separable {
                            depthwise(s, s, 3, ci, false) + conv(s, s, 1, ci, h.head_width, true, false)
                        } else {
                            conv(s, s, 3, ci, h.head_width, true, false)
                        };
                        ci = h.head_width;
                    }
                    level += if h.separable {
                        depthwise(s, s, 3, ci, false) + conv(s, s, 1, ci, outputs, false, true)
                    } else {
                        conv(s, s, 3, ci, outputs, false, true)
                    };
                }
                total += if i == 0 { level } else { level.madds_only() };
            }
            total
        }
        HeadKind::Maskrcnn => {
            let nc = h.num_classes + 1;
            let mut total = Cost::ZERO;
            for (i, l) in OUTPUT_LEVELS.into_iter().enumerate() {
                let s = r >> l;
                let rpn = conv(s, s, 3, od, h.rpn_width, false, true)
                    + conv(s, s, 1, h.rpn_width, 3, false, true)
                    + conv(s, s, 1, h.rpn_width, 12, false, true);
                total += if i == 0 { rpn } else { rpn.madds_only() };
            }
            let b = h.box_roi_size;
            let mut box_branch = Cost::ZERO;
            let mut ci = od;
            for _ in 0..4 {
                box_branch += conv(b, b, 3, ci, 256, true, false);
                ci = 256;
            }
            box_branch += fc(b * b * 256, h.fc_width, true) + fc(h.fc_width, nc, true) + fc(h.fc_width, 4 * nc, true);
            total += box_branch.repeated(u(h.proposals));
            let m = h.mask_roi_size;
            let mut mask = Cost::ZERO;
            ci = od;
            for _ in 0..4 {
                mask += conv(m, m, 3, ci, 256, true, false);
                ci = 256;
            }
            // 2x2 stride-2 transposed conv, counted on its input grid.
            mask += Cost::new(u(m) * u(m) * 4 * 256 * 256, 4 * 256 * 256 + 256);
            mask += conv(2 * m, 2 * m, 1, 256, nc, false, true);
            total += mask.repeated(u(h.mask_rois));
            total
        }
        HeadKind::Classifier => fc(od, h.num_classes, true),
        HeadKind::FinalFeatureClassifier => {
            let last = g.stem.last().map(|b| b.io_channels()).unwrap_or(0);
            fc(last, h.num_classes, true)
        }
    }
}

pub fn count_model(m: &ModelWithHead, resolution: u32) -> Result<CostReport> {
    let g = &m.graph;
    let shapes = infer_shapes(g, resolution)?;
    let r = resolution;
    let entry = entry_cost(g, r);
    let mut per_block = BTreeMap::new();
    let mut stem_total = entry;
    let mut prev = BlockInput {
        channels: g.entry.width,
        h: r >> g.entry.output_level(),
        w: r >> g.entry.output_level(),
    };
    for (i, b) in g.stem.iter().enumerate() {
        let out = shapes.blocks[&b.id];
        let c = count_block_from(b, prev, out, g.stem_stride(i), &g.mbconv)?;
        per_block.insert(b.id, c);
        stem_total += c;
        prev = BlockInput {
            channels: out.c,
            h: out.h,
            w: out.w,
        };
    }
    let mut permuted_total = Cost::ZERO;
    for b in &g.permuted {
        let c = count_block(b, shapes.blocks[&b.id], &g.mbconv)?;
        per_block.insert(b.id, c);
        permuted_total += c;
    }
    let cfg = ResampleConfig::of(g);
    let index = g.index();
    let mut resample_total = Cost::ZERO;
    for e in &g.edges {
        let (p, t) = (index[&e.parent], index[&e.child]);
        let plan = plan_for_edge(p, t, e.kind, &cfg)?;
        resample_total += resample_cost(&plan, shapes.blocks[&p.id], shapes.blocks[&t.id])?;
    }
    let od = g.output_dim;
    let decoder_total = match g.decoder {
        Decoder::OutputProjections => g
            .output_blocks()
            .map(|b| {
                let s = shapes.blocks[&b.id];
                conv(s.h, s.w, 1, s.c, od, true, false)
            })
            .sum(),
        Decoder::Fpn => {
            let mut c = Cost::ZERO;
            for l in 3..=5u8 {
                let tap = g.stem_tap(l).ok_or_else(|| Error::Head(format!("no L{l} stem block for FPN")))?;
                let s = shapes.blocks[&tap.id];
                c += conv(s.h, s.w, 1, s.c, od, false, true) + conv(s.h, s.w, 3, od, od, false, true);
            }
            c + conv(r >> 6, r >> 6, 3, od, od, false, true) + conv(r >> 7, r >> 7, 3, od, od, false, true)
        }
        Decoder::None => Cost::ZERO,
    };
    let head_total = m.head.as_ref().map(|h| head_cost(h, g, r)).unwrap_or_default();
    let grand_total = stem_total + permuted_total + resample_total + decoder_total + head_total;
    Ok(CostReport {
        model: g.name.clone(),
        head: m.head.as_ref().map(|h| h.kind),
        resolution,
        entry,
        per_block,
        stem_total,
        permuted_total,
        resample_total,
        decoder_total,
        head_total,
        grand_total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub resolution: u32,
    pub madds: u64,
    pub params: u64,
    pub madds_ratio: f64,
    pub params_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Totals of each report with ratios against the first one.
pub fn compare_models(reports: &[CostReport]) -> Result<Comparison> {
    let base = reports
        .first()
        .ok_or_else(|| Error::Head("compare_models needs at least one report".into()))?
        .grand_total;
    let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(Comparison {
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                model: r.model.clone(),
                resolution: r.resolution,
                madds: r.grand_total.madds,
                params: r.grand_total.params,
                madds_ratio: ratio(r.grand_total.madds, base.madds),
                params_ratio: ratio(r.grand_total.params, base.params),
            })
            .collect(),
    })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>6} {:>12} {:>10} {:>8} {:>8}",
            "model", "res", "madds(B)", "params(M)", "x madds", "x params"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>12.2} {:>10.2} {:>8.3} {:>8.3}",
                r.model,
                r.resolution,
                r.madds as f64 / 1e9,
                r.params as f64 / 1e6,
                r.madds_ratio,
                r.params_ratio
            );
        }
        s
    }
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let head = self.head.map(|h| h.name()).unwrap_or("none");
        let _ = writeln!(s, "model {} @{} head {}", self.model, self.resolution, head);
        let _ = writeln!(s, "{:<12} {:>14} {:>12}", "component", "madds", "params");
        for (name, c) in [
            ("stem", self.stem_total),
            ("permuted", self.permuted_total),
            ("resample", self.resample_total),
            ("decoder", self.decoder_total),
            ("head", self.head_total),
            ("total", self.grand_total),
        ] {
            let _ = writeln!(s, "{:<12} {:>14} {:>12}", name, c.madds, c.params);
        }
        let _ = writeln!(
            s,
            "total: {:.2}B madds, {:.2}M params",
            self.grand_total.madds as f64 / 1e9,
            self.grand_total.params as f64 / 1e6
        );
        s
    }
}

/// One published cost row with its tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRow {
    pub model: String,
    pub resolution: u32,
    pub head: HeadKind,
    pub madds: f64,
    pub params: Option<f64>,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenTable {
    pub table: String,
    pub rows: Vec<GoldenRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoldenCheck {
    pub model: String,
    pub resolution: u32,
    pub madds: u64,
    pub params: u64,
    pub madds_rel_err: f64,
    pub params_rel_err: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GoldenRow {
    pub fn check(&self, report: &CostReport) -> GoldenCheck {
        let rel = |got: u64, want: f64| got as f64 / want - 1.0;
        let m = rel(report.grand_total.madds, self.madds);
        let p = self.params.map(|want| rel(report.grand_total.params, want));
        let pass = m.abs() <= self.tolerance && p.is_none_or(|p| p.abs() <= self.tolerance);
        GoldenCheck {
            model: self.model.clone(),
            resolution: self.resolution,
            madds: report.grand_total.madds,
            params: report.grand_total.params,
            madds_rel_err: m,
            params_rel_err: p,
            tolerance: self.tolerance,
            pass,
        }
    }
}

pub const GOLDEN_TABLES: [(&str, &str); 4] = [
    ("table2", include_str!("../../../goldens/table2.json")),
    ("table3", include_str!("../../../goldens/table3.json")),
    ("table4", include_str!("../../../goldens/table4.json")),
    ("table7", include_str!("../../../goldens/table7.json")),
];

pub fn golden_table(name: &str) -> Result<GoldenTable> {
    let key = name.strip_suffix("_row").unwrap_or(name);
    let text = GOLDEN_TABLES
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Load {
            name: name.into(),
            detail: "no such golden table".into(),
        })?;
    Ok(serde_json::from_str(text)?)
}
