use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::{validate_graph_with, BackboneGraph, BlockId, Decoder, ValidationMode, OUTPUT_LEVELS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Shape {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

impl Shape {
    pub fn square(res: u32, c: u32) -> Self {
        Self { h: res, w: res, c }
    }

    pub fn elements(&self) -> usize {
        self.h as usize * self.w as usize * self.c as usize
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.h, self.w, self.c)
    }
}

/// Output shape of every block plus the pyramid levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeMap {
    pub resolution: u32,
    pub blocks: BTreeMap<BlockId, Shape>,
    /// P3..P7 (empty for graphs without a pyramid decoder).
    pub pyramid: BTreeMap<u8, Shape>,
}

impl ShapeMap {
    pub fn block(&self, id: BlockId) -> Option<Shape> {
        self.blocks.get(&id).copied()
    }
}

/// Per-level resolution, erroring on the first level that floors to zero.
pub(crate) fn level_resolution(resolution: u32, level: u8) -> Result<u32> {
    let r = resolution >> level;
    if r == 0 {
        Err(Error::ResolutionUnderflow { resolution, level })
    } else {
        Ok(r)
    }
}

pub fn infer_shapes(g: &BackboneGraph, input_resolution: u32) -> Result<ShapeMap> {
    let report = validate_graph_with(g, ValidationMode::Relaxed);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    if input_resolution == 0 || input_resolution % 2 != 0 {
        return Err(Error::OddResolution(input_resolution));
    }
    let mut blocks = BTreeMap::new();
    // Deepest levels first so the reported level is the first one to underflow.
    let mut levels: Vec<u8> = g.blocks().map(|b| b.level.get()).collect();
    if g.decoder != Decoder::None {
        levels.extend(OUTPUT_LEVELS);
    }
    levels.sort_unstable();
    levels.dedup();
    for &l in &levels {
        level_resolution(input_resolution, l)?;
    }
    for b in g.blocks() {
        let r = level_resolution(input_resolution, b.level.get())?;
        blocks.insert(b.id, Shape::square(r, b.io_channels()));
    }
    let mut pyramid = BTreeMap::new();
    if g.decoder != Decoder::None {
        for l in OUTPUT_LEVELS {
            let r = level_resolution(input_resolution, l)?;
            pyramid.insert(l, Shape::square(r, g.output_dim));
        }
    }
    Ok(ShapeMap {
        resolution: input_resolution,
        blocks,
        pyramid,
    })
}
