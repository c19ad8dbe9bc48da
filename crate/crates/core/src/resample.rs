//! Linear resampling with half-pixel centres (align-corners = false).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source taps for one output coordinate along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|j| {
            let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    let v = (1.0 - t) * a + t * b;
    // Keeps the result inside [min(a,b), max(a,b)] despite rounding.
    v.clamp(a.min(b), a.max(b))
}

/// Resamples one axis of a row-major buffer.
fn resize_axis(data: &[f32], shape: &[usize], axis: usize, out_len: usize) -> Vec<f32> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let in_len = shape[axis];
    let taps = taps(in_len, out_len);
    let mut out = vec![0.0f32; outer * out_len * inner];
    for o in 0..outer {
        let src = &data[o * in_len * inner..(o + 1) * in_len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for (j, tap) in taps.iter().enumerate() {
            let a = &src[tap.lo * inner..(tap.lo + 1) * inner];
            let b = &src[tap.hi * inner..(tap.hi + 1) * inner];
            for ((d, &x), &y) in dst[j * inner..(j + 1) * inner].iter_mut().zip(a).zip(b) {
                *d = lerp(x, y, tap.frac);
            }
        }
    }
    out
}

fn resize_separable(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    if target.contains(&0) {
        return Err(Error::invalid(format!("zero target size {target:?}")));
    }
    let mut shape = t.shape().to_vec();
    let mut data = t.data().to_vec();
    for (k, &len) in target.iter().enumerate() {
        let axis = k + 1;
        if shape[axis] != len {
            data = resize_axis(&data, &shape, axis, len);
            shape[axis] = len;
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Bilinear resize of a `[C, H, W]` tensor.
pub fn resize_bilinear_2d(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if t.rank() != 3 {
        return Err(Error::invalid(format!("expected [C,H,W], got {:?}", t.shape())));
    }
    resize_separable(t, &[out_h, out_w])
}

/// Trilinear resize of a `[C, T, H, W]` tensor.
pub fn resize_trilinear_3d(t: &Tensor, out_t: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
    if t.rank() != 4 {
        return Err(Error::invalid(format!("expected [C,T,H,W], got {:?}", t.shape())));
    }
    resize_separable(t, &[out_t, out_h, out_w])
}
