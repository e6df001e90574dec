//! Numeric kernels shared by the tape's forward and backward passes.

use super::Real;

/// `out[m,n] += a[m,k] · b[k,n]`. Each output row depends only on its own input
/// row, and the accumulation order over `k` is fixed, so results are identical
/// regardless of how many rows are batched together.
pub(crate) fn matmul_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · bᵀ` where `b` is `[k,n]`.
pub(crate) fn matmul_grad_a<F: Real>(
    g: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut s = F::zero();
            for (gv, bv) in g_row.iter().zip(b_row) {
                s = s + *gv * *bv;
            }
            out[i * k + kk] = out[i * k + kk] + s;
        }
    }
}

/// `out[k,n] += aᵀ · g` where `a` is `[m,k]`.
pub(crate) fn matmul_grad_b<F: Real>(
    a: &[F],
    g: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == F::zero() {
                continue;
            }
            let o_row = &mut out[kk * n..(kk + 1) * n];
            for (o, gv) in o_row.iter_mut().zip(g_row) {
                *o = *o + av * *gv;
            }
        }
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Geometry of a causal-in-time, same-in-frequency 2D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub t: usize,
    pub f: usize,
    pub kt: usize,
    pub kf: usize,
}

impl ConvGeom {
    /// Input time index read by kernel tap `a` for output time `t`, if in range.
    #[inline]
    fn src_t(&self, t: usize, a: usize) -> Option<usize> {
        (t + a).checked_sub(self.kt - 1)
    }

    /// Output frequency range for which tap `e` reads a valid input bin, plus the
    /// signed offset from output to input bin.
    #[inline]
    fn f_span(&self, e: usize) -> (usize, usize, isize) {
        let pad = (self.kf / 2) as isize;
        let off = e as isize - pad;
        let lo = (-off).max(0) as usize;
        let hi = ((self.f as isize) - off).min(self.f as isize).max(0) as usize;
        (lo, hi, off)
    }
}

pub(crate) fn conv2d_forward<F: Real>(x: &[F], k: &[F], bias: Option<&[F]>, g: ConvGeom) -> Vec<F> {
    let plane = g.t * g.f;
    let mut out = vec![F::zero(); g.c_out * plane];
    if let Some(b) = bias {
        for o in 0..g.c_out {
            out[o * plane..(o + 1) * plane].fill(b[o]);
        }
    }
    for o in 0..g.c_out {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        for c in 0..g.c_in {
            let x_plane = &x[c * plane..(c + 1) * plane];
            for a in 0..g.kt {
                for e in 0..g.kf {
                    let w = k[((o * g.c_in + c) * g.kt + a) * g.kf + e];
                    let (lo, hi, off) = g.f_span(e);
                    for t in 0..g.t {
                        let Some(st) = g.src_t(t, a) else { continue };
                        let orow = &mut out_plane[t * g.f..(t + 1) * g.f];
                        let xrow = &x_plane[st * g.f..(st + 1) * g.f];
                        for fo in lo..hi {
                            let fi = (fo as isize + off) as usize;
                            orow[fo] = orow[fo] + w * xrow[fi];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward<F: Real>(
    x: &[F],
    k: &[F],
    grad: &[F],
    g: ConvGeom,
    dx: Option<&mut [F]>,
    dk: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    let plane = g.t * g.f;
    if let Some(db) = db {
        for o in 0..g.c_out {
            let s: F = grad[o * plane..(o + 1) * plane].iter().copied().sum();
            db[o] = db[o] + s;
        }
    }
    let mut dx = dx;
    let mut dk = dk;
    for o in 0..g.c_out {
        let g_plane = &grad[o * plane..(o + 1) * plane];
        for c in 0..g.c_in {
            let x_plane = &x[c * plane..(c + 1) * plane];
            for a in 0..g.kt {
                for e in 0..g.kf {
                    let kidx = ((o * g.c_in + c) * g.kt + a) * g.kf + e;
                    let w = k[kidx];
                    let (lo, hi, off) = g.f_span(e);
                    let mut wsum = F::zero();
                    for t in 0..g.t {
                        let Some(st) = g.src_t(t, a) else { continue };
                        let grow = &g_plane[t * g.f..(t + 1) * g.f];
                        if dk.is_some() {
                            let xrow = &x_plane[st * g.f..(st + 1) * g.f];
                            for fo in lo..hi {
                                let fi = (fo as isize + off) as usize;
                                wsum = wsum + grow[fo] * xrow[fi];
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let base = c * plane + st * g.f;
                            for fo in lo..hi {
                                let fi = (fo as isize + off) as usize;
                                dx[base + fi] = dx[base + fi] + w * grow[fo];
                            }
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[kidx] = dk[kidx] + wsum;
                    }
                }
            }
        }
    }
}

/// Index layout for relative-position attention scores of one head.
///
/// `delta_index[i * n_keys + j]` is the row of the projected position table
/// holding `R_{i-j}` for query `i` and key `j`.
#[derive(Debug, Clone)]
pub struct RelScoreLayout {
    pub n_queries: usize,
    pub n_keys: usize,
    pub head_offset: usize,
    pub head_dim: usize,
    pub scale: f64,
    pub delta_index: Vec<u32>,
}

/// Relative-position attention scores for one head.
///
/// `A[i,j] = scale·((q_i + u)·k_j + (q_i + v)·p_{δ(i,j)})`, which expands to the
/// four-term content/position/bias sum. All operands are full-width `[rows, d]`
/// matrices (or `[d]` vectors); the head's columns are selected by
/// `layout.head_offset..head_offset + head_dim`.
pub fn rel_scores_forward<F: Real>(
    q: &[F],
    k: &[F],
    p: &[F],
    u: &[F],
    v: &[F],
    d: usize,
    layout: &RelScoreLayout,
) -> Vec<F> {
    let (lq, lk, h0, dh) = (
        layout.n_queries,
        layout.n_keys,
        layout.head_offset,
        layout.head_dim,
    );
    let scale = F::lit(layout.scale);
    let u = &u[h0..h0 + dh];
    let v = &v[h0..h0 + dh];
    let mut out = vec![F::zero(); lq * lk];
    let mut qu = vec![F::zero(); dh];
    let mut qv = vec![F::zero(); dh];
    for i in 0..lq {
        let qi = &q[i * d + h0..i * d + h0 + dh];
        for c in 0..dh {
            qu[c] = qi[c] + u[c];
            qv[c] = qi[c] + v[c];
        }
        for j in 0..lk {
            let kj = &k[j * d + h0..j * d + h0 + dh];
            let r = layout.delta_index[i * lk + j] as usize;
            let pr = &p[r * d + h0..r * d + h0 + dh];
            let mut s = F::zero();
            for c in 0..dh {
                s = s + qu[c] * kj[c];
            }
            let mut t = F::zero();
            for c in 0..dh {
                t = t + qv[c] * pr[c];
            }
            out[i * lk + j] = (s + t) * scale;
        }
    }
    out
}

pub(crate) struct RelScoreGrads<'a, F> {
    pub dq: Option<&'a mut [F]>,
    pub dk: Option<&'a mut [F]>,
    pub dp: Option<&'a mut [F]>,
    pub du: Option<&'a mut [F]>,
    pub dv: Option<&'a mut [F]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn rel_scores_backward<F: Real>(
    q: &[F],
    k: &[F],
    p: &[F],
    u: &[F],
    v: &[F],
    d: usize,
    layout: &RelScoreLayout,
    grad: &[F],
    mut out: RelScoreGrads<'_, F>,
) {
    let (lq, lk, h0, dh) = (
        layout.n_queries,
        layout.n_keys,
        layout.head_offset,
        layout.head_dim,
    );
    let scale = F::lit(layout.scale);
    let uh = &u[h0..h0 + dh];
    let vh = &v[h0..h0 + dh];
    let mut qu = vec![F::zero(); dh];
    let mut qv = vec![F::zero(); dh];
    let mut dqi = vec![F::zero(); dh];
    for i in 0..lq {
        let qi = &q[i * d + h0..i * d + h0 + dh];
        for c in 0..dh {
            qu[c] = qi[c] + uh[c];
            qv[c] = qi[c] + vh[c];
        }
        dqi.fill(F::zero());
        for j in 0..lk {
            let gij = grad[i * lk + j] * scale;
            if gij == F::zero() {
                continue;
            }
            let kj = &k[j * d + h0..j * d + h0 + dh];
            let r = layout.delta_index[i * lk + j] as usize;
            let pr = &p[r * d + h0..r * d + h0 + dh];
            for c in 0..dh {
                dqi[c] = dqi[c] + gij * (kj[c] + pr[c]);
            }
            if let Some(du) = out.du.as_deref_mut() {
                for c in 0..dh {
                    du[h0 + c] = du[h0 + c] + gij * kj[c];
                }
            }
            if let Some(dv) = out.dv.as_deref_mut() {
                for c in 0..dh {
                    dv[h0 + c] = dv[h0 + c] + gij * pr[c];
                }
            }
            if let Some(dk) = out.dk.as_deref_mut() {
                let row = &mut dk[j * d + h0..j * d + h0 + dh];
                for c in 0..dh {
                    row[c] = row[c] + gij * qu[c];
                }
            }
            if let Some(dp) = out.dp.as_deref_mut() {
                let row = &mut dp[r * d + h0..r * d + h0 + dh];
                for c in 0..dh {
                    row[c] = row[c] + gij * qv[c];
                }
            }
        }
        if let Some(dq) = out.dq.as_deref_mut() {
            let row = &mut dq[i * d + h0..i * d + h0 + dh];
            for c in 0..dh {
                row[c] = row[c] + dqi[c];
            }
        }
    }
}

/// Strides for a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For a permutation `axes`, maps each output flat index to its input flat index.
pub(crate) fn permute_index(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    let n: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src: usize = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
        map.push(src);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}
