//! NHWC layer kernels. Convolutions are lowered to GEMM through im2col; all
//! reductions run in a fixed order so results are bit-reproducible.

use super::TAPS;
use crate::real::{gemm, MatRef, Real};

/// Spatial dimensions of an NHWC activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.c
    }
}

/// Rows of 3x3 zero-padded patches, one row per output pixel, columns in
/// `(ky, kx, channel)` order.
pub(crate) fn im2col3x3<R: Real>(x: &[R], d: Dims, cols: &mut Vec<R>) {
    let (h, w, c) = (d.h, d.w, d.c);
    let run = 3 * c;
    cols.clear();
    cols.reserve(d.pixels() * TAPS * c);
    for img in x.chunks_exact(h * w * c).take(d.n) {
        for y in 0..h {
            for xx in 0..w {
                for sy in (y as isize - 1)..=(y as isize + 1) {
                    if sy < 0 || sy >= h as isize {
                        cols.resize(cols.len() + run, R::zero());
                        continue;
                    }
                    let line = &img[sy as usize * w * c..(sy as usize + 1) * w * c];
                    if xx > 0 && xx + 1 < w {
                        cols.extend_from_slice(&line[(xx - 1) * c..(xx + 2) * c]);
                        continue;
                    }
                    for sx in (xx as isize - 1)..=(xx as isize + 1) {
                        if sx < 0 || sx >= w as isize {
                            cols.resize(cols.len() + c, R::zero());
                        } else {
                            cols.extend_from_slice(&line[sx as usize * c..(sx as usize + 1) * c]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto the input grid (adjoint of im2col).
pub(crate) fn col2im3x3<R: Real>(dcols: &[R], d: Dims, dx: &mut [R]) {
    let (h, w, c) = (d.h, d.w, d.c);
    let k = TAPS * c;
    dx.fill(R::zero());
    let mut rows = dcols.chunks_exact(k);
    for img in dx.chunks_exact_mut(h * w * c).take(d.n) {
        for y in 0..h {
            for xx in 0..w {
                let row = rows.next().expect("dcols shorter than the grid");
                for (ky, sy) in ((y as isize - 1)..=(y as isize + 1)).enumerate() {
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let line = &mut img[sy as usize * w * c..(sy as usize + 1) * w * c];
                    let taps = &row[ky * 3 * c..(ky + 1) * 3 * c];
                    if xx > 0 && xx + 1 < w {
                        for (o, &g) in line[(xx - 1) * c..(xx + 2) * c].iter_mut().zip(taps) {
                            *o += g;
                        }
                        continue;
                    }
                    for (kx, sx) in ((xx as isize - 1)..=(xx as isize + 1)).enumerate() {
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = &mut line[sx as usize * c..(sx as usize + 1) * c];
                        for (o, &g) in dst.iter_mut().zip(&taps[kx * c..(kx + 1) * c]) {
                            *o += g;
                        }
                    }
                }
            }
        }
    }
}

/// `out[p, o] = sum_k cols[p, k] * weight[o, k] + bias[o]`.
pub(crate) fn conv_forward<R: Real>(cols: &[R], rows: usize, weight: &[R], bias: &[R], out: &mut Vec<R>) {
    let cout = bias.len();
    let k = weight.len() / cout;
    out.clear();
    out.reserve(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(
        MatRef::new(cols, rows, k),
        MatRef::new(weight, cout, k).t(),
        R::one(),
        out,
    );
}

/// Weight and bias gradients of [`conv_forward`]; optionally the patch
/// gradient `dcols = dout * weight`.
pub(crate) fn conv_backward<R: Real>(
    cols: &[R],
    rows: usize,
    weight: &[R],
    dout: &[R],
    dweight: &mut [R],
    dbias: &mut [R],
    dcols: Option<&mut Vec<R>>,
) {
    let cout = dbias.len();
    let k = weight.len() / cout;
    gemm(
        MatRef::new(dout, rows, cout).t(),
        MatRef::new(cols, rows, k),
        R::one(),
        dweight,
    );
    for row in dout.chunks_exact(cout) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(dcols) = dcols {
        dcols.clear();
        dcols.resize(rows * k, R::zero());
        gemm(
            MatRef::new(dout, rows, cout),
            MatRef::new(weight, cout, k),
            R::zero(),
            dcols,
        );
    }
}

pub(crate) fn relu_inplace<R: Real>(x: &mut [R]) {
    for v in x {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// Zeroes gradient entries whose ReLU output was not positive.
pub(crate) fn relu_backward<R: Real>(activated: &[R], grad: &mut [R]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= R::zero() {
            *g = R::zero();
        }
    }
}

/// 2x2 stride-2 max pool (odd trailing rows/columns dropped). Returns the
/// pooled map and, per output, the flat input index of the maximum (first
/// occurrence on ties).
pub(crate) fn maxpool2<R: Real>(x: &[R], d: Dims) -> (Vec<R>, Vec<u32>, Dims) {
    let od = Dims {
        n: d.n,
        h: d.h / 2,
        w: d.w / 2,
        c: d.c,
    };
    let c = d.c;
    let line = d.w * c;
    let mut out = vec![R::zero(); od.len()];
    let mut arg = vec![0u32; od.len()];
    let mut cells = out.chunks_exact_mut(c).zip(arg.chunks_exact_mut(c));
    for b in 0..d.n {
        for y in 0..od.h {
            let top = ((b * d.h) + 2 * y) * line;
            for xx in 0..od.w {
                let base = top + 2 * xx * c;
                let offsets = [base, base + c, base + line, base + line + c];
                let (o, a) = cells.next().expect("pool output sized from dims");
                o.copy_from_slice(&x[base..base + c]);
                a.iter_mut().zip(base as u32..).for_each(|(a, i)| *a = i);
                for &off in &offsets[1..] {
                    let v = &x[off..off + c];
                    for (((o, a), &v), i) in o.iter_mut().zip(a.iter_mut()).zip(v).zip(off as u32..) {
                        if v > *o {
                            *o = v;
                            *a = i;
                        }
                    }
                }
            }
        }
    }
    (out, arg, od)
}

pub(crate) fn maxpool2_backward<R: Real>(dout: &[R], argmax: &[u32], input_len: usize) -> Vec<R> {
    let mut dx = vec![R::zero(); input_len];
    for (&g, &i) in dout.iter().zip(argmax) {
        dx[i as usize] += g;
    }
    dx
}

/// Global average pool: `[n, h, w, c] -> [n, c]`.
pub(crate) fn global_avg_pool<R: Real>(x: &[R], d: Dims) -> Vec<R> {
    let hw = d.h * d.w;
    let inv = R::one() / R::from_usize(hw).unwrap();
    let mut out = vec![R::zero(); d.n * d.c];
    for b in 0..d.n {
        let acc = &mut out[b * d.c..(b + 1) * d.c];
        for px in x[b * hw * d.c..(b + 1) * hw * d.c].chunks_exact(d.c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in acc {
            *a *= inv;
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<R: Real>(dout: &[R], d: Dims) -> Vec<R> {
    let hw = d.h * d.w;
    let inv = R::one() / R::from_usize(hw).unwrap();
    let mut dx = Vec::with_capacity(d.len());
    for b in 0..d.n {
        let g = &dout[b * d.c..(b + 1) * d.c];
        for _ in 0..hw {
            dx.extend(g.iter().map(|&v| v * inv));
        }
    }
    dx
}

/// `logits[i, c] = sum_d feat[i, d] * weight[c, d] + bias[c]`.
pub(crate) fn affine<R: Real>(feat: &[R], n: usize, weight: &[R], bias: &[R]) -> Vec<R> {
    let classes = bias.len();
    let dim = weight.len() / classes;
    let mut out = Vec::with_capacity(n * classes);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    gemm(
        MatRef::new(feat, n, dim),
        MatRef::new(weight, classes, dim).t(),
        R::one(),
        &mut out,
    );
    out
}

/// Accumulates affine-layer gradients; returns `dfeat = dlogits * weight`.
pub(crate) fn affine_backward<R: Real>(
    feat: &[R],
    n: usize,
    weight: &[R],
    dlogits: &[R],
    dweight: &mut [R],
    dbias: &mut [R],
    dfeat: &mut [R],
) {
    let classes = dbias.len();
    let dim = weight.len() / classes;
    gemm(
        MatRef::new(dlogits, n, classes).t(),
        MatRef::new(feat, n, dim),
        R::one(),
        dweight,
    );
    for row in dlogits.chunks_exact(classes) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    gemm(
        MatRef::new(dlogits, n, classes),
        MatRef::new(weight, classes, dim),
        R::one(),
        dfeat,
    );
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<R: Real>(logits: &mut [R], classes: usize) {
    for row in logits.chunks_exact_mut(classes) {
        let m = row.iter().copied().fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}
