use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::graph::Shape;

/// Dense HWC tensor of f32, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

/// Magic bytes of the raw tensor dump.
pub const DUMP_MAGIC: &[u8; 8] = b"SPNTENS1";

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.elements()],
        }
    }

    pub fn filled(shape: Shape, v: f32) -> Self {
        Self {
            shape,
            data: vec![v; shape.elements()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.elements() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        let s = self.shape;
        self.data[(y * s.w as usize + x) * s.c as usize + c]
    }

    /// Channel vector at one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let c = self.shape.c as usize;
        let o = (y * self.shape.w as usize + x) * c;
        &self.data[o..o + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Little-endian dump: magic, three u32 dims (H, W, C), f32 payload.
    pub fn write_raw(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for d in [self.shape.h, self.shape.w, self.shape.c] {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Exec(format!("raw tensor: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != DUMP_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut dims = [0u32; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *d = u32::from_le_bytes(b);
        }
        let shape = Shape {
            h: dims[0],
            w: dims[1],
            c: dims[2],
        };
        let mut bytes = vec![0u8; shape.elements() * 4];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated payload"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(shape, data)
    }
}
