//! Naive reference kernels over HWC tensors. Convolutions use "same" zero
//! padding against an explicit output size: total padding
//! `max((out - 1) * stride + k - in, 0)`, the smaller half before.

use crate::error::{Error, Result};
use crate::graph::Shape;

use super::Tensor;

fn pad_before(input: u32, output: u32, k: u32, stride: u32) -> i64 {
    let total = ((output as i64 - 1) * stride as i64 + k as i64 - input as i64).max(0);
    total / 2
}

/// Dense conv with weights laid out `[kh][kw][cin][cout]`.
pub fn conv2d(x: &Tensor, w: &[f32], k: u32, stride: u32, out: Shape) -> Result<Tensor> {
    let s = x.shape();
    let (cin, cout) = (s.c as usize, out.c as usize);
    let k_us = k as usize;
    if w.len() != k_us * k_us * cin * cout {
        return Err(Error::Exec(format!(
            "conv weights: {} values for {k}x{k}x{cin}x{cout}",
            w.len()
        )));
    }
    let (py, px) = (pad_before(s.h, out.h, k, stride), pad_before(s.w, out.w, k, stride));
    let mut y = Tensor::zeros(out);
    let data = y.data_mut();
    for oy in 0..out.h as i64 {
        for ox in 0..out.w as i64 {
            let o = ((oy * out.w as i64 + ox) as usize) * cout;
            let acc = &mut data[o..o + cout];
            for ky in 0..k as i64 {
                let iy = oy * stride as i64 + ky - py;
                if iy < 0 || iy >= s.h as i64 {
                    continue;
                }
                for kx in 0..k as i64 {
                    let ix = ox * stride as i64 + kx - px;
                    if ix < 0 || ix >= s.w as i64 {
                        continue;
                    }
                    let xin = x.pixel(iy as usize, ix as usize);
                    let base = (ky as usize * k_us + kx as usize) * cin * cout;
                    for (ci, &a) in xin.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let row = &w[base + ci * cout..base + (ci + 1) * cout];
                        for (o, &wv) in acc.iter_mut().zip(row) {
                            *o += a * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Depthwise conv with weights laid out `[kh][kw][c]`.
pub fn depthwise2d(x: &Tensor, w: &[f32], k: u32, stride: u32, out: Shape) -> Result<Tensor> {
    let s = x.shape();
    let c = s.c as usize;
    let k_us = k as usize;
    if w.len() != k_us * k_us * c || out.c != s.c {
        return Err(Error::Exec(format!("depthwise weights: {} values for {k}x{k}x{c}", w.len())));
    }
    let (py, px) = (pad_before(s.h, out.h, k, stride), pad_before(s.w, out.w, k, stride));
    let mut y = Tensor::zeros(out);
    let data = y.data_mut();
    for oy in 0..out.h as i64 {
        for ox in 0..out.w as i64 {
            let o = ((oy * out.w as i64 + ox) as usize) * c;
            let acc = &mut data[o..o + c];
            for ky in 0..k as i64 {
                let iy = oy * stride as i64 + ky - py;
                if iy < 0 || iy >= s.h as i64 {
                    continue;
                }
                for kx in 0..k as i64 {
                    let ix = ox * stride as i64 + kx - px;
                    if ix < 0 || ix >= s.w as i64 {
                        continue;
                    }
                    let xin = x.pixel(iy as usize, ix as usize);
                    let base = (ky as usize * k_us + kx as usize) * c;
                    for ((o, &a), &wv) in acc.iter_mut().zip(xin).zip(&w[base..base + c]) {
                        *o += a * wv;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Fully-connected layer over the flattened input, weights `[in][out]`.
pub fn dense(x: &Tensor, w: &[f32], outputs: u32) -> Result<Tensor> {
    let inputs = x.data();
    let n = outputs as usize;
    if w.len() != inputs.len() * n {
        return Err(Error::Exec(format!(
            "fc weights: {} values for {}x{n}",
            w.len(),
            inputs.len()
        )));
    }
    let mut y = vec![0.0f32; n];
    for (i, &a) in inputs.iter().enumerate() {
        for (o, &wv) in y.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += a * wv;
        }
    }
    Tensor::from_vec(Shape::square(1, outputs), y)
}

pub fn max_pool(x: &Tensor, k: u32, stride: u32, out: Shape) -> Tensor {
    let s = x.shape();
    let c = s.c as usize;
    let (py, px) = (pad_before(s.h, out.h, k, stride), pad_before(s.w, out.w, k, stride));
    let mut y = Tensor::filled(out, f32::NEG_INFINITY);
    let data = y.data_mut();
    for oy in 0..out.h as i64 {
        for ox in 0..out.w as i64 {
            let o = ((oy * out.w as i64 + ox) as usize) * c;
            let acc = &mut data[o..o + c];
            for ky in 0..k as i64 {
                let iy = oy * stride as i64 + ky - py;
                if iy < 0 || iy >= s.h as i64 {
                    continue;
                }
                for kx in 0..k as i64 {
                    let ix = ox * stride as i64 + kx - px;
                    if ix < 0 || ix >= s.w as i64 {
                        continue;
                    }
                    for (o, &a) in acc.iter_mut().zip(x.pixel(iy as usize, ix as usize)) {
                        *o = o.max(a);
                    }
                }
            }
        }
    }
    y
}

/// Nearest-neighbour resize: output pixel `i` reads input `floor(i * in / out)`.
pub fn resize_nearest(x: &Tensor, out_h: u32, out_w: u32) -> Tensor {
    let s = x.shape();
    let out = Shape {
        h: out_h,
        w: out_w,
        c: s.c,
    };
    let c = s.c as usize;
    let mut y = Tensor::zeros(out);
    let data = y.data_mut();
    for oy in 0..out_h as usize {
        let iy = oy * s.h as usize / out_h as usize;
        for ox in 0..out_w as usize {
            let ix = ox * s.w as usize / out_w as usize;
            let o = (oy * out_w as usize + ox) * c;
            data[o..o + c].copy_from_slice(x.pixel(iy, ix));
        }
    }
    y
}

/// Non-overlapping `f x f` average pooling.
pub fn avg_pool(x: &Tensor, f: u32) -> Tensor {
    let s = x.shape();
    let out = Shape {
        h: s.h / f,
        w: s.w / f,
        c: s.c,
    };
    let c = s.c as usize;
    let mut y = Tensor::zeros(out);
    let norm = 1.0 / (f * f) as f32;
    let data = y.data_mut();
    for oy in 0..out.h as usize {
        for ox in 0..out.w as usize {
            let o = (oy * out.w as usize + ox) * c;
            for dy in 0..f as usize {
                for dx in 0..f as usize {
                    let p = x.pixel(oy * f as usize + dy, ox * f as usize + dx);
                    for (acc, &a) in data[o..o + c].iter_mut().zip(p) {
                        *acc += a;
                    }
                }
            }
            for v in &mut data[o..o + c] {
                *v *= norm;
            }
        }
    }
    y
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let s = x.shape();
    let c = s.c as usize;
    let mut acc = vec![0.0f64; c];
    for px in x.data().chunks_exact(c.max(1)) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let n = (s.h as f64 * s.w as f64).max(1.0);
    let data = acc.into_iter().map(|a| (a / n) as f32).collect();
    Tensor::from_vec(Shape::square(1, s.c), data).expect("pooled shape")
}

pub fn add_all(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::Exec("add of nothing".into()))?;
    let mut y = (*first).clone();
    for x in &xs[1..] {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!("add {} + {}", y.shape(), x.shape())));
        }
        for (a, &b) in y.data_mut().iter_mut().zip(x.data()) {
            *a += b;
        }
    }
    Ok(y)
}

pub fn gate(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    let c = x.shape().c as usize;
    if g.data().len() != c {
        return Err(Error::ShapeMismatch(format!("gate {} on {}", g.shape(), x.shape())));
    }
    let mut y = x.clone();
    for px in y.data_mut().chunks_exact_mut(c.max(1)) {
        for (a, &s) in px.iter_mut().zip(g.data()) {
            *a *= s;
        }
    }
    Ok(y)
}

pub fn relu(v: f32) -> f32 {
    v.max(0.0)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn swish(v: f32) -> f32 {
    v * sigmoid(v)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - m) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum) as f32).collect()
}
