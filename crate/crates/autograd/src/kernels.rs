//! Raw slice kernels behind the graph primitives.

use crate::real::{gemm, Real, Strides};

/// Geometry of a 2-D patch extraction: `c x h x w` image, `kh x kw` kernel,
/// `oh x ow` output grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch2d {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Patch2d {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output columns `[lo, hi)` for kernel column `j`.
    fn ox_range(&self, j: usize) -> (usize, usize) {
        let lo = if self.pw > j {
            (self.pw - j).div_ceil(self.sw)
        } else {
            0
        };
        let hi = if self.w + self.pw > j {
            ((self.w - 1 + self.pw - j) / self.sw + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn iy(&self, oy: usize, i: usize) -> Option<usize> {
        let y = (oy * self.sh + i) as isize - self.ph as isize;
        (y >= 0 && (y as usize) < self.h).then_some(y as usize)
    }
}

pub(crate) fn im2col<S: Real>(img: &[S], g: &Patch2d, col: &mut [S]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * n..(row + 1) * n];
                let (lo, hi) = g.ox_range(j);
                for oy in 0..g.oh {
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.iy(oy, i) {
                        None => seg.fill(S::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            seg[..lo].fill(S::zero());
                            seg[hi..].fill(S::zero());
                            for ox in lo..hi {
                                seg[ox] = src[ox * g.sw + j - g.pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `img`.
pub(crate) fn col2im<S: Real>(col: &[S], g: &Patch2d, img: &mut [S]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * n..(row + 1) * n];
                let (lo, hi) = g.ox_range(j);
                for oy in 0..g.oh {
                    if let Some(iy) = g.iy(oy, i) {
                        let seg = &src[oy * g.ow..(oy + 1) * g.ow];
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        for ox in lo..hi {
                            dst[ox * g.sw + j - g.pw] += seg[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn add_channel_bias<S: Real>(out: &mut [S], bias: &[S], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

pub(crate) fn channel_bias_grad<S: Real>(dout: &[S], db: &mut [S], plane: usize) {
    let co = db.len();
    for (idx, chunk) in dout.chunks(plane).enumerate() {
        db[idx % co] += chunk.iter().copied().sum::<S>();
    }
}

/// Cross-correlation forward; `x` is `[batch, c, h, w]`, `w` is `[co, c*kh*kw]`.
pub(crate) fn conv2d_forward<S: Real>(x: &[S], w: &[S], g: &Patch2d, co: usize, batch: usize) -> Vec<S> {
    let (k, n) = (g.rows(), g.cols());
    let in_plane = g.c * g.h * g.w;
    let mut out = vec![S::zero(); batch * co * n];
    let mut col = vec![S::zero(); k * n];
    for b in 0..batch {
        im2col(&x[b * in_plane..(b + 1) * in_plane], g, &mut col);
        gemm(co, k, n, w, Strides::rm(k), &col, Strides::rm(n), S::zero(), &mut out[b * co * n..], Strides::rm(n));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Real>(
    x: &[S],
    w: &[S],
    dout: &[S],
    g: &Patch2d,
    co: usize,
    batch: usize,
    mut dx: Option<&mut [S]>,
    mut dw: Option<&mut [S]>,
) {
    let (k, n) = (g.rows(), g.cols());
    let in_plane = g.c * g.h * g.w;
    let mut col = vec![S::zero(); k * n];
    for b in 0..batch {
        let db = &dout[b * co * n..(b + 1) * co * n];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * in_plane..(b + 1) * in_plane], g, &mut col);
            gemm(co, n, k, db, Strides::rm(n), &col, Strides::tr(n), S::one(), dw, Strides::rm(k));
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(k, co, n, w, Strides::tr(k), db, Strides::rm(n), S::zero(), &mut col, Strides::rm(n));
            col2im(&col, g, &mut dx[b * in_plane..(b + 1) * in_plane]);
        }
    }
}

/// Transposed convolution; `g` describes the *output* image with the input
/// as its patch grid. `w` is `[ci, co*kh*kw]`.
pub(crate) fn conv_t2d_forward<S: Real>(x: &[S], w: &[S], g: &Patch2d, ci: usize, batch: usize) -> Vec<S> {
    let (k, n) = (g.rows(), g.cols());
    let out_plane = g.c * g.h * g.w;
    let mut out = vec![S::zero(); batch * out_plane];
    let mut col = vec![S::zero(); k * n];
    for b in 0..batch {
        gemm(k, ci, n, w, Strides::tr(k), &x[b * ci * n..], Strides::rm(n), S::zero(), &mut col, Strides::rm(n));
        col2im(&col, g, &mut out[b * out_plane..(b + 1) * out_plane]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t2d_backward<S: Real>(
    x: &[S],
    w: &[S],
    dout: &[S],
    g: &Patch2d,
    ci: usize,
    batch: usize,
    mut dx: Option<&mut [S]>,
    mut dw: Option<&mut [S]>,
) {
    let (k, n) = (g.rows(), g.cols());
    let out_plane = g.c * g.h * g.w;
    let mut dcol = vec![S::zero(); k * n];
    for b in 0..batch {
        im2col(&dout[b * out_plane..(b + 1) * out_plane], g, &mut dcol);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(ci, k, n, w, Strides::rm(k), &dcol, Strides::rm(n), S::zero(), &mut dx[b * ci * n..], Strides::rm(n));
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm(ci, n, k, &x[b * ci * n..], Strides::rm(n), &dcol, Strides::tr(n), S::one(), dw, Strides::rm(k));
        }
    }
}

/// Geometry of a grouped 1-D convolution over `[n, c, l]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dGeom {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub co: usize,
    pub k: usize,
    pub groups: usize,
    pub p0: usize,
    pub lo: usize,
}

impl Conv1dGeom {
    fn range(&self, j: usize) -> (usize, usize) {
        let lo = self.p0.saturating_sub(j);
        let hi = (self.l + self.p0).saturating_sub(j).min(self.lo);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward<S: Real>(x: &[S], w: &[S], bias: Option<&[S]>, g: &Conv1dGeom) -> Vec<S> {
    let cin_g = g.c / g.groups;
    let cout_g = g.co / g.groups;
    let mut out = vec![S::zero(); g.n * g.co * g.lo];
    for n in 0..g.n {
        for co in 0..g.co {
            let grp = co / cout_g;
            let dst = &mut out[(n * g.co + co) * g.lo..(n * g.co + co + 1) * g.lo];
            if let Some(b) = bias {
                dst.fill(b[co]);
            }
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let src = &x[(n * g.c + ci) * g.l..(n * g.c + ci + 1) * g.l];
                for j in 0..g.k {
                    let wv = w[(co * cin_g + cl) * g.k + j];
                    let (lo, hi) = g.range(j);
                    for o in lo..hi {
                        dst[o] += wv * src[o + j - g.p0];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_backward<S: Real>(
    x: &[S],
    w: &[S],
    dout: &[S],
    g: &Conv1dGeom,
    mut dx: Option<&mut [S]>,
    mut dw: Option<&mut [S]>,
    mut db: Option<&mut [S]>,
) {
    let cin_g = g.c / g.groups;
    let cout_g = g.co / g.groups;
    for n in 0..g.n {
        for co in 0..g.co {
            let grp = co / cout_g;
            let dsrc = &dout[(n * g.co + co) * g.lo..(n * g.co + co + 1) * g.lo];
            if let Some(db) = db.as_deref_mut() {
                db[co] += dsrc.iter().copied().sum::<S>();
            }
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let xs = (n * g.c + ci) * g.l;
                for j in 0..g.k {
                    let widx = (co * cin_g + cl) * g.k + j;
                    let (lo, hi) = g.range(j);
                    if let Some(dw) = dw.as_deref_mut() {
                        let src = &x[xs..xs + g.l];
                        let mut acc = S::zero();
                        for o in lo..hi {
                            acc += dsrc[o] * src[o + j - g.p0];
                        }
                        dw[widx] += acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[widx];
                        let dst = &mut dx[xs..xs + g.l];
                        for o in lo..hi {
                            dst[o + j - g.p0] += wv * dsrc[o];
                        }
                    }
                }
            }
        }
    }
}

/// Output shape and gather strides for an axis permutation.
pub(crate) fn permute<S: Real>(data: &[S], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<S>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out_shape, out);
    }
    if rank == 0 {
        out.push(data[0]);
        return (out_shape, out);
    }
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < total {
        for i in 0..inner {
            out.push(data[base + i * inner_stride]);
        }
        // odometer over the outer axes
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Multi-head scaled dot-product attention over `[n, l, e]` inputs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnGeom {
    pub n: usize,
    pub l: usize,
    pub e: usize,
    pub heads: usize,
    pub causal: bool,
}

impl AttnGeom {
    fn d(&self) -> usize {
        self.e / self.heads
    }
}

/// Returns (output, probabilities `[n, heads, l, l]`).
pub(crate) fn attention_forward<S: Real>(q: &[S], k: &[S], v: &[S], g: &AttnGeom) -> (Vec<S>, Vec<S>) {
    let (l, e, d) = (g.l, g.e, g.d());
    let scale = S::one() / S::c(d as f64).sqrt();
    let mut out = vec![S::zero(); g.n * l * e];
    let mut probs = vec![S::zero(); g.n * g.heads * l * l];
    let row = Strides { rs: e, cs: 1 };
    let col = Strides { rs: 1, cs: e };
    for n in 0..g.n {
        for h in 0..g.heads {
            let off = n * l * e + h * d;
            let p = &mut probs[(n * g.heads + h) * l * l..(n * g.heads + h + 1) * l * l];
            gemm(l, d, l, &q[off..], row, &k[off..], col, S::zero(), p, Strides::rm(l));
            for i in 0..l {
                let r = &mut p[i * l..(i + 1) * l];
                let valid = if g.causal { i + 1 } else { l };
                let mut mx = S::neg_infinity();
                for x in r[..valid].iter_mut() {
                    *x *= scale;
                    mx = mx.max(*x);
                }
                let mut z = S::zero();
                for x in r[..valid].iter_mut() {
                    *x = (*x - mx).exp();
                    z += *x;
                }
                for x in r[..valid].iter_mut() {
                    *x /= z;
                }
                r[valid..].fill(S::zero());
            }
            gemm(l, l, d, p, Strides::rm(l), &v[off..], row, S::zero(), &mut out[off..], row);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<S: Real>(
    q: &[S],
    k: &[S],
    v: &[S],
    probs: &[S],
    dout: &[S],
    g: &AttnGeom,
    dq: &mut [S],
    dk: &mut [S],
    dv: &mut [S],
) {
    let (l, e, d) = (g.l, g.e, g.d());
    let scale = S::one() / S::c(d as f64).sqrt();
    let row = Strides { rs: e, cs: 1 };
    let col = Strides { rs: 1, cs: e };
    let mut ds = vec![S::zero(); l * l];
    for n in 0..g.n {
        for h in 0..g.heads {
            let off = n * l * e + h * d;
            let p = &probs[(n * g.heads + h) * l * l..(n * g.heads + h + 1) * l * l];
            // dP = dO V^T
            gemm(l, d, l, &dout[off..], row, &v[off..], col, S::zero(), &mut ds, Strides::rm(l));
            // dV += P^T dO
            gemm(l, l, d, p, Strides::tr(l), &dout[off..], row, S::one(), &mut dv[off..], row);
            for i in 0..l {
                let pr = &p[i * l..(i + 1) * l];
                let dr = &mut ds[i * l..(i + 1) * l];
                let dot: S = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot) * scale;
                }
            }
            gemm(l, l, d, &ds, Strides::rm(l), &k[off..], row, S::one(), &mut dq[off..], row);
            gemm(l, l, d, &ds, Strides::tr(l), &q[off..], row, S::one(), &mut dk[off..], row);
        }
    }
}

pub(crate) fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
