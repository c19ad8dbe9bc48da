//! Binary PPM (P6, maxval 255) images as `[3, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::stf::write_atomic;
use crate::tensor::Tensor;

pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::invalid(format!(
            "PPM needs a [3,H,W] image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let n = h * w;
    out.reserve(3 * n);
    for i in 0..n {
        for c in 0..3 {
            out.push(quantize(image.data()[c * n + i]));
        }
    }
    Ok(out)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "PPM",
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Option<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| &bytes[start..pos])
    };
    if token() != Some(b"P6") {
        return Err(malformed(path, "missing P6 magic"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(path, format!("bad {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(malformed(path, format!("maxval {maxval} unsupported")));
    }
    if w == 0 || h == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = w * h;
    if bytes.len() < start + 3 * n {
        return Err(malformed(path, "truncated raster"));
    }
    let raster = &bytes[start..start + 3 * n];
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = raster[3 * i + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode(image)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode(&std::fs::read(path)?, path)
}
