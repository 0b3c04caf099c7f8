//! Forward and backward kernels for the individual layer types.

use super::tensor::{gemm, MatRef, Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfold one sample (`c x h x w`) into a `patch_len x positions` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pos = oh * ow;
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * pos..(row + 1) * pos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.in_h + iy as usize) * g.in_w..][..g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add an unfolded gradient back onto the sample gradient.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pos = oh * ow;
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * pos..(row + 1) * pos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = (c * g.in_h + iy as usize) * g.in_w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dx[base + ix as usize] = dx[base + ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. Returns the output and, when `keep_cols` is set, the
/// unfolded inputs of every sample (reused by the backward pass).
pub(crate) fn conv_forward<T: Real>(
    x: &Tensor4<T>,
    g: &ConvGeom,
    weights: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Tensor4<T>, Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pos = oh * ow;
    let plen = g.patch_len();
    let mut out = Tensor4::zeros(x.n, g.out_c, oh, ow);
    let mut kept = if keep_cols { vec![T::zero(); x.n * plen * pos] } else { Vec::new() };
    let mut scratch = if keep_cols { Vec::new() } else { vec![T::zero(); plen * pos] };
    let wmat = MatRef::new(weights, g.out_c, plen);
    for s in 0..x.n {
        let cols: &mut [T] = if keep_cols {
            &mut kept[s * plen * pos..(s + 1) * plen * pos]
        } else {
            &mut scratch
        };
        im2col(x.sample(s), g, cols);
        let y = &mut out.data[s * g.out_c * pos..(s + 1) * g.out_c * pos];
        for (o, row) in y.chunks_exact_mut(pos).enumerate() {
            row.fill(bias[o]);
        }
        gemm(wmat, MatRef::new(cols, plen, pos), T::one(), y);
    }
    (out, kept)
}

/// Convolution backward: accumulates weight/bias gradients and, if requested,
/// returns the input gradient.
pub(crate) fn conv_backward<T: Real>(
    dy: &Tensor4<T>,
    g: &ConvGeom,
    weights: &[T],
    cols: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Tensor4<T>> {
    let pos = g.positions();
    let plen = g.patch_len();
    let wmat = MatRef::new(weights, g.out_c, plen);
    let mut dx = want_dx.then(|| Tensor4::zeros(dy.n, g.in_c, g.in_h, g.in_w));
    let mut dcols = if want_dx { vec![T::zero(); plen * pos] } else { Vec::new() };
    for s in 0..dy.n {
        let dys = dy.sample(s);
        let cs = &cols[s * plen * pos..(s + 1) * plen * pos];
        gemm(MatRef::new(dys, g.out_c, pos), MatRef::new(cs, plen, pos).t(), T::one(), dw);
        for (o, row) in dys.chunks_exact(pos).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(wmat.t(), MatRef::new(dys, g.out_c, pos), T::zero(), &mut dcols);
            let len = g.in_c * g.in_h * g.in_w;
            col2im(&dcols, g, &mut dx.data[s * len..(s + 1) * len]);
        }
    }
    dx
}

/// Non-overlapping max pooling with window `size`; trailing rows/columns that
/// do not fill a window are dropped. Also returns the flat input index of each
/// output's maximum.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor4<T>, size: usize) -> (Tensor4<T>, Vec<u32>) {
    let (oh, ow) = (x.h / size, x.w / size);
    let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0u32; out.data.len()];
    let mut o = 0;
    for plane in 0..x.n * x.c {
        let base = plane * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * x.w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * x.w + ox * size + dx;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                }
                out.data[o] = x.data[best];
                arg[o] = best as u32;
                o += 1;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &Tensor4<T>, arg: &[u32], input_dims: (usize, usize, usize, usize)) -> Tensor4<T> {
    let (n, c, h, w) = input_dims;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (g, &i) in dy.data.iter().zip(arg) {
        dx.data[i as usize] = dx.data[i as usize] + *g;
    }
    dx
}

/// `y = x W^T + b` with `W` stored `units x in_len`; input samples flattened.
pub(crate) fn fc_forward<T: Real>(x: &Tensor4<T>, weights: &[T], bias: &[T], units: usize) -> Tensor4<T> {
    let d = x.sample_len();
    let mut out = Tensor4::zeros(x.n, units, 1, 1);
    for row in out.data.chunks_exact_mut(units) {
        row.copy_from_slice(bias);
    }
    gemm(MatRef::new(&x.data, x.n, d), MatRef::new(weights, units, d).t(), T::one(), &mut out.data);
    out
}

pub(crate) fn fc_backward<T: Real>(
    dy: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Tensor4<T>> {
    let units = dy.c;
    let d = x.sample_len();
    gemm(MatRef::new(&dy.data, dy.n, units).t(), MatRef::new(&x.data, x.n, d), T::one(), dw);
    for row in dy.data.chunks_exact(units) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    want_dx.then(|| {
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        gemm(MatRef::new(&dy.data, dy.n, units), MatRef::new(weights, units, d), T::zero(), &mut dx.data);
        dx
    })
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Tensor4<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Row-wise numerically stable softmax over the flattened sample.
pub(crate) fn softmax<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let d = x.sample_len();
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}
