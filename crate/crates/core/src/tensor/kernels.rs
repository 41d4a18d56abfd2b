//! Raw forward/backward kernels over row-major slices.
//!
//! Every reduction here runs in a fixed order, so results are bit-identical
//! across runs regardless of how rayon schedules the outer loops.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub(crate) fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(op, format!("expected C×H×W, got {shape:?}"))),
    }
}

pub(crate) fn rc(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dim(op, format!("expected a matrix, got {shape:?}"))),
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        (&[m, k], &[k2, p]) if k == k2 => Ok((m, k, p)),
        _ => Err(Error::dim(
            "matmul",
            format!("cannot multiply {a:?} by {b:?}"),
        )),
    }
}

/// `out += a · b` for `a: m×k`, `b: k×p`.
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `da += dy · bᵀ`.
pub(crate) fn matmul_grad_a(dy: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let dyrow = &dy[i * p..(i + 1) * p];
        for kk in 0..k {
            let brow = &b[kk * p..(kk + 1) * p];
            da[i * k + kk] += dot(dyrow, brow);
        }
    }
}

/// `db += aᵀ · dy`.
pub(crate) fn matmul_grad_b(a: &[f64], dy: &[f64], db: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let dyrow = &dy[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = a[i * k + kk];
            let dbrow = &mut db[kk * p..(kk + 1) * p];
            for (o, &g) in dbrow.iter_mut().zip(dyrow) {
                *o += av * g;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Shape bookkeeping for a padded, stride-1 cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], weight: &[usize], pad: usize) -> Result<Self> {
        let (c_in, h, w) = chw(x, "conv2d")?;
        let [c_out, wc_in, kh, kw] = *weight else {
            return Err(Error::dim(
                "conv2d",
                format!("weight must be C_out×C_in×k×k, got {weight:?}"),
            ));
        };
        if kh != kw {
            return Err(Error::dim("conv2d", format!("non-square kernel {kh}×{kw}")));
        }
        if kh % 2 == 0 {
            return Err(Error::UnsupportedKernel(kh));
        }
        if wc_in != c_in {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c_in} channels, weight {weight:?} expects {wc_in}"),
            ));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {k} larger than padded input {h}×{w} (pad {pad})"),
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            pad,
            h_out: h + 2 * pad - k + 1,
            w_out: w + 2 * pad - k + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.c_out, self.h_out, self.w_out]
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    /// Output rows whose tap `kh` lands inside the input.
    #[inline]
    fn rows(&self, kh: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kh);
        let hi = (self.h + self.pad).saturating_sub(kh).min(self.h_out);
        (lo, hi.max(lo))
    }

    #[inline]
    fn cols(&self, kw: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kw);
        let hi = (self.w + self.pad).saturating_sub(kw).min(self.w_out);
        (lo, hi.max(lo))
    }
}

/// `c = a·b + beta·c` for row-major `a: m×k`, `b: k×n`, either of which may
/// be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element the strides address.
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` into a `(C_in·k·k) × (H_out·W_out)` patch matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.h_out * g.w_out;
    let plane_in = g.h * g.w;
    let k = g.k;
    let mut col = vec![0.0; g.c_in * k * k * n];
    col.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let (ci, kh, kw) = (r / (k * k), (r / k) % k, r % k);
        let xplane = &x[ci * plane_in..(ci + 1) * plane_in];
        let (r0, r1) = g.rows(kh);
        let (c0, c1) = g.cols(kw);
        for oh in r0..r1 {
            let ioff = (oh + kh - g.pad) * g.w + c0 + kw - g.pad;
            row[oh * g.w_out + c0..oh * g.w_out + c1].copy_from_slice(&xplane[ioff..ioff + (c1 - c0)]);
        }
    });
    col
}

/// Adds a patch-matrix gradient back onto the input layout.
fn col2im_add(col: &[f64], dx: &mut [f64], g: &ConvGeom) {
    let n = g.h_out * g.w_out;
    let plane_in = g.h * g.w;
    let k = g.k;
    dx.par_chunks_mut(plane_in).enumerate().for_each(|(ci, xplane)| {
        for kh in 0..k {
            let (r0, r1) = g.rows(kh);
            for kw in 0..k {
                let row = &col[((ci * k + kh) * k + kw) * n..][..n];
                let (c0, c1) = g.cols(kw);
                for oh in r0..r1 {
                    let ioff = (oh + kh - g.pad) * g.w + c0 + kw - g.pad;
                    let src = &row[oh * g.w_out + c0..oh * g.w_out + c1];
                    for (o, &d) in xplane[ioff..ioff + (c1 - c0)].iter_mut().zip(src) {
                        *o += d;
                    }
                }
            }
        }
    });
}

/// Adds the convolution of `x` with `weight` into `out`.
pub(crate) fn conv2d_forward(x: &[f64], weight: &[f64], out: &mut [f64], g: &ConvGeom) {
    let col = im2col(x, g);
    let kk = g.c_in * g.k * g.k;
    gemm(g.c_out, kk, g.h_out * g.w_out, weight, false, &col, false, 1.0, out);
}

/// Accumulates the input gradient into `dx`.
pub(crate) fn conv2d_grad_input(dy: &[f64], weight: &[f64], dx: &mut [f64], g: &ConvGeom) {
    let kk = g.c_in * g.k * g.k;
    let n = g.h_out * g.w_out;
    let mut dcol = vec![0.0; kk * n];
    gemm(kk, g.c_out, n, weight, true, dy, false, 0.0, &mut dcol);
    col2im_add(&dcol, dx, g);
}

/// Accumulates the weight gradient into `dw`.
pub(crate) fn conv2d_grad_weight(dy: &[f64], x: &[f64], dw: &mut [f64], g: &ConvGeom) {
    let col = im2col(x, g);
    let kk = g.c_in * g.k * g.k;
    gemm(g.c_out, g.h_out * g.w_out, kk, dy, false, &col, true, 1.0, dw);
}

pub(crate) fn global_avg_pool(x: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let inv = 1.0 / plane as f64;
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * inv)
        .collect()
}

/// Returns `[max; mean]` planes and the winning channel per pixel. Ties go to
/// the lowest channel index.
pub(crate) fn channel_pool(x: &[f64], c: usize, plane: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; 2 * plane];
    let mut argmax = vec![0usize; plane];
    out[..plane].copy_from_slice(&x[..plane]);
    out[plane..].copy_from_slice(&x[..plane]);
    for ch in 1..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        for p in 0..plane {
            let v = src[p];
            if v > out[p] {
                out[p] = v;
                argmax[p] = ch;
            }
            out[plane + p] += v;
        }
    }
    let inv = 1.0 / c as f64;
    for v in &mut out[plane..] {
        *v *= inv;
    }
    (out, argmax)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Largest f64 strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1).
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        let e = (-x).exp();
        1.0 - e / (1.0 + e)
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Broadcast of a `C×H×W` tensor against an operand whose axes are each
/// either 1 or the full extent.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Broadcast3 {
    c: usize,
    h: usize,
    w: usize,
    full: [bool; 3],
    gh: usize,
    gw: usize,
}

impl Broadcast3 {
    pub fn new(x: &[usize], g: &[usize], op: &'static str) -> Result<Self> {
        let (c, h, w) = chw(x, op)?;
        let &[gc, gh, gw] = g else {
            return Err(Error::dim(op, format!("cannot broadcast {g:?} to {x:?}")));
        };
        let ok = |ge: usize, e: usize| ge == 1 || ge == e;
        if !(ok(gc, c) && ok(gh, h) && ok(gw, w)) {
            return Err(Error::dim(op, format!("cannot broadcast {g:?} to {x:?}")));
        }
        Ok(Self {
            c,
            h,
            w,
            full: [gc == c && c != 1, gh == h && h != 1, gw == w && w != 1],
            gh,
            gw,
        })
    }

    #[inline]
    fn gidx(&self, c: usize, h: usize, w: usize) -> usize {
        let c = if self.full[0] { c } else { 0 };
        let h = if self.full[1] { h } else { 0 };
        let w = if self.full[2] { w } else { 0 };
        (c * self.gh + h) * self.gw + w
    }

    pub fn apply(&self, x: &[f64], g: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for c in 0..self.c {
            for h in 0..self.h {
                for w in 0..self.w {
                    let i = (c * self.h + h) * self.w + w;
                    out.push(f(x[i], g[self.gidx(c, h, w)]));
                }
            }
        }
        out
    }

    /// Sums a full-shape field into the operand's shape.
    pub fn reduce(&self, full: &[f64], into: &mut [f64]) {
        for c in 0..self.c {
            for h in 0..self.h {
                for w in 0..self.w {
                    let i = (c * self.h + h) * self.w + w;
                    into[self.gidx(c, h, w)] += full[i];
                }
            }
        }
    }
}
