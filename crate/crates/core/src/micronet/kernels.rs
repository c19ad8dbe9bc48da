//! Convolution, pooling and dense kernels on channel-first buffers.
//!
//! Everything works on a `[C, D, H, W]` layout; 2D tensors are the `D = 1`
//! case with `(1, k, k)` kernels. Forward kernels are generic over the
//! scalar so the same code runs in f64 for finite-difference checks;
//! backward kernels are f32 only.

use std::ops::{Add, AddAssign, Mul};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.spatial()
    }
}

pub(crate) trait Scalar:
    Copy + Default + PartialOrd + Send + Sync + 'static + Add<Output = Self> + Mul<Output = Self> + AddAssign
{
    const ZERO: Self;
    fn from_f32(v: f32) -> Self;

    /// `c = a · b + beta · c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;

            fn from_f32(v: f32) -> Self {
                v as $t
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (isize, isize),
            ) {
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
                    }
                };
                assert!(a.len() as isize >= span(m, k, rsa, csa));
                assert!(b.len() as isize >= span(k, n, rsb, csb));
                assert!(c.len() as isize >= span(m, n, rsc, csc));
                // SAFETY: the asserts above bound every index the kernel
                // touches for non-negative strides, which is all we pass.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub input: Dims,
    pub out_c: usize,
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Rows of the unfolded matrix: `in_c * kd * kh * kw`.
    pub fn patch(&self) -> usize {
        self.input.c * self.kernel.iter().product::<usize>()
    }

    pub fn output(&self) -> Dims {
        Dims {
            c: self.out_c,
            ..self.input
        }
    }
}

/// Unfolds `x` into a `[patch, spatial]` matrix for a stride-1 "same" conv.
pub(crate) fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, cols: &mut Vec<S>) {
    let Dims { c, d, h, w } = g.input;
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    let p = d * h * w;
    cols.clear();
    cols.resize(g.patch() * p, S::ZERO);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * p..(ci + 1) * p];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let x_lo = pw.saturating_sub(kx);
                    let x_hi = (w + pw).saturating_sub(kx).min(w);
                    for z in 0..d {
                        let iz = z + kz;
                        if iz < pd || iz - pd >= d {
                            continue;
                        }
                        let iz = iz - pd;
                        for y in 0..h {
                            let iy = y + ky;
                            if iy < ph || iy - ph >= h || x_lo >= x_hi {
                                continue;
                            }
                            let iy = iy - ph;
                            let src = (iz * h + iy) * w;
                            let o = (z * h + y) * w;
                            let ix_lo = x_lo + kx - pw;
                            dst[o + x_lo..o + x_hi]
                                .copy_from_slice(&plane[src + ix_lo..src + ix_lo + (x_hi - x_lo)]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Folds a `[patch, spatial]` gradient back onto the input, accumulating.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let Dims { c, d, h, w } = g.input;
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    let p = d * h * w;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut dx[ci * p..(ci + 1) * p];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let x_lo = pw.saturating_sub(kx);
                    let x_hi = (w + pw).saturating_sub(kx).min(w);
                    for z in 0..d {
                        let iz = z + kz;
                        if iz < pd || iz - pd >= d {
                            continue;
                        }
                        let iz = iz - pd;
                        for y in 0..h {
                            let iy = y + ky;
                            if iy < ph || iy - ph >= h || x_lo >= x_hi {
                                continue;
                            }
                            let iy = iy - ph;
                            let dst = (iz * h + iy) * w + x_lo + kx - pw;
                            let o = (z * h + y) * w;
                            for (t, &v) in plane[dst..dst + (x_hi - x_lo)]
                                .iter_mut()
                                .zip(&src[o + x_lo..o + x_hi])
                            {
                                *t += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<S: Scalar>(
    x: &[S],
    g: &ConvGeom,
    weight: &[S],
    bias: &[S],
    cols: &mut Vec<S>,
) -> Vec<S> {
    let p = g.input.spatial();
    let k = g.patch();
    im2col(x, g, cols);
    let mut out = vec![S::ZERO; g.out_c * p];
    for (o, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias[o]);
    }
    // Computed as out^T = cols^T * weight^T: the layout matrixmultiply
    // packs fastest for these shapes.
    S::gemm(
        p,
        k,
        g.out_c,
        cols,
        (1, p as isize),
        weight,
        (1, k as isize),
        S::from_f32(1.0),
        &mut out,
        (1, p as isize),
    );
    out
}

/// Transposes a row-major `[rows, cols]` matrix into `dst`.
fn transpose(src: &[f32], rows: usize, cols: usize, dst: &mut Vec<f32>) {
    const B: usize = 32;
    dst.clear();
    dst.resize(rows * cols, 0.0);
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                let row = &src[r * cols..(r + 1) * cols];
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = row[c];
                }
            }
        }
    }
}

/// Gradients of a convolution. Parameter gradients accumulate into `dw`
/// and `db` when given; the input gradient is returned when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f32],
    g: &ConvGeom,
    weight: &[f32],
    dout: &[f32],
    want_dx: bool,
    param_grads: Option<(&mut [f32], &mut [f32])>,
    cols: &mut Vec<f32>,
) -> Option<Vec<f32>> {
    let p = g.input.spatial();
    let k = g.patch();
    if let Some((dw, db)) = param_grads {
        im2col(x, g, cols);
        let mut cols_t = Vec::new();
        transpose(cols, k, p, &mut cols_t);
        f32::gemm(
            g.out_c,
            p,
            k,
            dout,
            (p as isize, 1),
            &cols_t,
            (k as isize, 1),
            1.0,
            dw,
            (k as isize, 1),
        );
        for (b, row) in db.iter_mut().zip(dout.chunks_exact(p)) {
            *b += row.iter().sum::<f32>();
        }
    }
    if !want_dx {
        return None;
    }
    cols.clear();
    cols.resize(k * p, 0.0);
    f32::gemm(
        k,
        g.out_c,
        p,
        weight,
        (1, k as isize),
        dout,
        (p as isize, 1),
        0.0,
        cols,
        (p as isize, 1),
    );
    let mut dx = vec![0.0f32; g.input.len()];
    col2im(cols, g, &mut dx);
    Some(dx)
}

pub(crate) fn pool_output(input: Dims, window: [usize; 3]) -> Dims {
    Dims {
        c: input.c,
        d: input.d / window[0],
        h: input.h / window[1],
        w: input.w / window[2],
    }
}

/// Non-overlapping max pooling. Returns the pooled values and, for each
/// output, the flat input index of its (first) maximum.
pub(crate) fn maxpool_forward<S: Scalar>(x: &[S], input: Dims, window: [usize; 3]) -> (Vec<S>, Vec<u32>) {
    let out = pool_output(input, window);
    let [wd, wh, ww] = window;
    let mut values = Vec::with_capacity(out.len());
    let mut argmax = Vec::with_capacity(out.len());
    for c in 0..out.c {
        for z in 0..out.d {
            for y in 0..out.h {
                for xo in 0..out.w {
                    let mut best_i = usize::MAX;
                    let mut best = S::ZERO;
                    for dz in 0..wd {
                        for dy in 0..wh {
                            let base = ((c * input.d + z * wd + dz) * input.h + y * wh + dy) * input.w + xo * ww;
                            for dx in 0..ww {
                                let v = x[base + dx];
                                if best_i == usize::MAX || v > best {
                                    best = v;
                                    best_i = base + dx;
                                }
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_i as u32);
                }
            }
        }
    }
    (values, argmax)
}

pub(crate) fn maxpool_backward(dout: &[f32], argmax: &[u32], input_len: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; input_len];
    for (&g, &i) in dout.iter().zip(argmax) {
        dx[i as usize] += g;
    }
    dx
}

pub(crate) fn relu_forward<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| if v > S::ZERO { v } else { S::ZERO }).collect()
}

/// `out` is the ReLU output; `out > 0` exactly where the input was `> 0`.
pub(crate) fn relu_backward(out: &[f32], dout: &[f32], guided: bool) -> Vec<f32> {
    out.iter()
        .zip(dout)
        .map(|(&a, &g)| {
            if a > 0.0 && (!guided || g > 0.0) {
                g
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) fn fc_forward<S: Scalar>(x: &[S], weight: &[S], bias: &[S]) -> Vec<S> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            let mut acc = S::ZERO;
            for (&w, &v) in row.iter().zip(x) {
                acc += w * v;
            }
            acc + b
        })
        .collect()
}

pub(crate) fn fc_backward(
    x: &[f32],
    weight: &[f32],
    dout: &[f32],
    want_dx: bool,
    param_grads: Option<(&mut [f32], &mut [f32])>,
) -> Option<Vec<f32>> {
    let n_in = x.len();
    if let Some((dw, db)) = param_grads {
        for (o, &g) in dout.iter().enumerate() {
            db[o] += g;
            for (w, &v) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0f32; n_in];
        for (o, &g) in dout.iter().enumerate() {
            for (d, &w) in dx.iter_mut().zip(&weight[o * n_in..(o + 1) * n_in]) {
                *d += g * w;
            }
        }
        dx
    })
}
