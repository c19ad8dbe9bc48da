//! sRGB to CIELAB (D65) conversion.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple in `[0, 1]` (clamped) to `(L, a, b)`.
pub fn rgb_to_lab_pixel(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb.map(|c| srgb_to_linear((c as f64).clamp(0.0, 1.0)));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

/// Converts a channel-first RGB image or volume (`[3, ...]`) to Lab.
pub fn rgb_to_lab(t: &Tensor) -> Result<Tensor> {
    if t.rank() < 2 || t.shape()[0] != 3 {
        return Err(Error::invalid(format!(
            "expected 3 leading colour channels, got {:?}",
            t.shape()
        )));
    }
    let n = t.len() / 3;
    let (r, g, b) = (t.channel(0), t.channel(1), t.channel(2));
    let mut out = vec![0.0f32; t.len()];
    for i in 0..n {
        let lab = rgb_to_lab_pixel([r[i], g[i], b[i]]);
        out[i] = lab[0];
        out[n + i] = lab[1];
        out[2 * n + i] = lab[2];
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), out))
}
