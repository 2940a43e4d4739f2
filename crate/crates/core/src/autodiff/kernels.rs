//! Forward and backward numeric kernels.
//!
//! Every kernel is a pure function; parallel sections write disjoint output
//! regions and keep accumulation order fixed, so results do not depend on
//! thread count. Layout conventions: activations `[N, C, T, F]`, conv weights
//! `[K, C, KH, KW]`, dense activations `[N, D]`, dense weights `[D_in, D_out]`.

use crate::error::{Error, Result};
use crate::parallel;

use super::tensor::Tensor;

#[inline]
fn saxpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

/// Fused 4-tap stencil: `out[i] += w0 x[i] + w1 x[i+1] + w2 x[i+2] + w3 x[i+3]`.
/// One pass over the row instead of four saxpy sweeps.
#[inline]
fn stencil4_add(out: &mut [f64], x: &[f64], w: [f64; 4]) {
    debug_assert!(x.len() >= out.len() + 3);
    let n = out.len();
    let x = &x[..n + 3];
    for i in 0..n {
        out[i] += w[0] * x[i] + w[1] * x[i + 1] + w[2] * x[i + 2] + w[3] * x[i + 3];
    }
}

/// Four simultaneous shifted dot products sharing one stream over `x`:
/// `acc[d] += sum_i g[i] * x[i + d]`.
#[inline]
fn quad_dot(g: &[f64], x: &[f64], acc: &mut [f64; 4]) {
    debug_assert!(x.len() >= g.len() + 3);
    let n = g.len();
    let x = &x[..n + 3];
    let mut a0 = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut a3 = 0.0;
    for i in 0..n {
        let gv = g[i];
        a0 += gv * x[i];
        a1 += gv * x[i + 1];
        a2 += gv * x[i + 2];
        a3 += gv * x[i + 3];
    }
    acc[0] += a0;
    acc[1] += a1;
    acc[2] += a2;
    acc[3] += a3;
}

/// Four-lane sum; fixed summation pattern, breaks the serial dependency chain.
#[inline]
fn lane_sum(v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += v[j];
        acc[1] += v[j + 1];
        acc[2] += v[j + 2];
        acc[3] += v[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for x in &v[chunks * 4..] {
        s += x;
    }
    s
}

/// Four-lane sum of squared deviations from `mean`.
#[inline]
fn lane_sq_dev(v: &[f64], mean: f64) -> f64 {
    let n = v.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        let d0 = v[j] - mean;
        let d1 = v[j + 1] - mean;
        let d2 = v[j + 2] - mean;
        let d3 = v[j + 3] - mean;
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for x in &v[chunks * 4..] {
        let d = x - mean;
        s += d * d;
    }
    s
}

/// Paired four-lane reduction for batch-norm backward: `(sum g, sum g*xhat)`.
#[inline]
fn lane_sum_g_gx(x: &[f64], g: &[f64], mean: f64, inv_std: f64) -> (f64, f64) {
    debug_assert_eq!(x.len(), g.len());
    let n = x.len();
    let mut ag = [0.0f64; 4];
    let mut agx = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        for l in 0..4 {
            ag[l] += g[j + l];
            agx[l] += g[j + l] * (x[j + l] - mean);
        }
    }
    let mut sg = (ag[0] + ag[1]) + (ag[2] + ag[3]);
    let mut sgx = (agx[0] + agx[1]) + (agx[2] + agx[3]);
    for j in chunks * 4..n {
        sg += g[j];
        sgx += g[j] * (x[j] - mean);
    }
    (sg, sgx * inv_std)
}

/// Four-lane dot product; fixed summation pattern for reproducibility.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Stride and explicit padding of a conv2d application.
/// Padding order: (time before, time after, freq before, freq after).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize, usize, usize),
}

impl Conv2dSpec {
    pub fn out_len(in_len: usize, pad0: usize, pad1: usize, k: usize, stride: usize) -> Option<usize> {
        let padded = in_len + pad0 + pad1;
        if padded < k || stride == 0 {
            return None;
        }
        Some((padded - k) / stride + 1)
    }
}

pub struct ConvShapes {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub f: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub t_out: usize,
    pub f_out: usize,
}

pub fn conv2d_check(x: &Tensor, w: &Tensor, b: &Tensor, spec: &Conv2dSpec) -> Result<ConvShapes> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 4 {
        return Err(Error::shape("conv2d", format!("input must be [N,C,T,F], got {xs:?}")));
    }
    if ws.len() != 4 {
        return Err(Error::shape("conv2d", format!("weight must be [K,C,KH,KW], got {ws:?}")));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(
            "conv2d",
            format!("channel dimension: input has C={} (dim 1), weight expects C={} (dim 1)", xs[1], ws[1]),
        ));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::shape(
            "conv2d",
            format!("bias dimension: got {:?}, weight has K={} (dim 0)", b.shape(), ws[0]),
        ));
    }
    if spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
    }
    let t_out = Conv2dSpec::out_len(xs[2], spec.pad.0, spec.pad.1, ws[2], spec.stride.0)
        .ok_or_else(|| Error::shape(
            "conv2d",
            format!("time dimension (dim 2): input {} + pad {}+{} shorter than kernel {}", xs[2], spec.pad.0, spec.pad.1, ws[2]),
        ))?;
    let f_out = Conv2dSpec::out_len(xs[3], spec.pad.2, spec.pad.3, ws[3], spec.stride.1)
        .ok_or_else(|| Error::shape(
            "conv2d",
            format!("frequency dimension (dim 3): input {} + pad {}+{} shorter than kernel {}", xs[3], spec.pad.2, spec.pad.3, ws[3]),
        ))?;
    Ok(ConvShapes {
        n: xs[0],
        c: xs[1],
        t: xs[2],
        f: xs[3],
        k: ws[0],
        kh: ws[2],
        kw: ws[3],
        t_out,
        f_out,
    })
}

/// Output columns (stride 1) where every tap `dx in 0..kw` reads in-bounds.
#[inline]
fn fwd_interior(f_in: usize, f_out: usize, pf0: usize, kw: usize) -> (usize, usize) {
    let ilo = pf0.min(f_out);
    let ihi = (f_in + pf0 + 1).saturating_sub(kw).min(f_out);
    (ilo, ihi.max(ilo))
}

/// Input columns (stride 1) where every tap of the transposed stencil reads
/// an in-bounds gradient column.
#[inline]
fn bwd_interior(f_in: usize, f_out: usize, pf0: usize, kw: usize) -> (usize, usize) {
    let ilo = (kw - 1).saturating_sub(pf0).min(f_in);
    let ihi = f_out.saturating_sub(pf0).min(f_in);
    (ilo, ihi.max(ilo))
}

/// Valid output-time range for a kernel row offset `dy`.
#[inline]
fn out_range(out_len: usize, in_len: usize, pad0: usize, d: usize, stride: usize) -> (usize, usize) {
    let lo = if d >= pad0 { 0 } else { (pad0 - d + stride - 1) / stride };
    let hi = if in_len + pad0 > d {
        ((in_len - 1 + pad0 - d) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi)
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let s = conv2d_check(x, w, b, spec)?;
    let (st, sf) = spec.stride;
    let (pt0, _, pf0, _) = spec.pad;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let plane = s.t_out * s.f_out;
    let mut out = vec![0.0; s.n * s.k * plane];

    // `to` outermost keeps the output row and the kh x C input rows it needs
    // resident in L1 across the whole kernel sweep.
    parallel::par_chunks_mut(&mut out, plane, |idx, o| {
        let n = idx / s.k;
        let k = idx % s.k;
        o.iter_mut().for_each(|v| *v = bd[k]);
        // interior columns where all four frequency taps are in range
        let (ilo, ihi) = fwd_interior(s.f, s.f_out, pf0, s.kw);
        for to in 0..s.t_out {
            let orow = &mut o[to * s.f_out..(to + 1) * s.f_out];
            for c in 0..s.c {
                let xp = &xd[(n * s.c + c) * s.t * s.f..][..s.t * s.f];
                let wp = &wd[(k * s.c + c) * s.kh * s.kw..][..s.kh * s.kw];
                for dy in 0..s.kh {
                    let ti = to * st + dy;
                    if ti < pt0 || ti - pt0 >= s.t {
                        continue;
                    }
                    let ti = ti - pt0;
                    let xrow = &xp[ti * s.f..(ti + 1) * s.f];
                    let wrow = &wp[dy * s.kw..(dy + 1) * s.kw];
                    if s.kw == 4 && sf == 1 && ihi > ilo {
                        stencil4_add(
                            &mut orow[ilo..ihi],
                            &xrow[ilo - pf0..],
                            [wrow[0], wrow[1], wrow[2], wrow[3]],
                        );
                    }
                    for dx in 0..s.kw {
                        let wv = wrow[dx];
                        let (fo_lo, fo_hi) = out_range(s.f_out, s.f, pf0, dx, sf);
                        if fo_lo >= fo_hi {
                            continue;
                        }
                        if s.kw == 4 && sf == 1 {
                            // borders only; the stencil covered [ilo, ihi)
                            let left_hi = fo_hi.min(ilo);
                            if fo_lo < left_hi {
                                let fi0 = fo_lo + dx - pf0;
                                saxpy(&mut orow[fo_lo..left_hi], &xrow[fi0..fi0 + (left_hi - fo_lo)], wv);
                            }
                            let right_lo = fo_lo.max(ihi);
                            if right_lo < fo_hi {
                                let fi0 = right_lo + dx - pf0;
                                saxpy(&mut orow[right_lo..fo_hi], &xrow[fi0..fi0 + (fo_hi - right_lo)], wv);
                            }
                        } else if sf == 1 {
                            let fi0 = fo_lo + dx - pf0;
                            saxpy(&mut orow[fo_lo..fo_hi], &xrow[fi0..fi0 + (fo_hi - fo_lo)], wv);
                        } else {
                            for fo in fo_lo..fo_hi {
                                orow[fo] += wv * xrow[fo * sf + dx - pf0];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![s.n, s.k, s.t_out, s.f_out], out)
}

/// Gradients of conv2d. Any of the three outputs can be skipped.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    spec: &Conv2dSpec,
    grad_out: &Tensor,
    need: (bool, bool, bool),
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let s = conv2d_check(x, w, b, spec)?;
    let (st, sf) = spec.stride;
    let (pt0, _, pf0, _) = spec.pad;
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let go_plane = s.t_out * s.f_out;

    let dx = if need.0 {
        let mut dxv = vec![0.0; s.n * s.c * s.t * s.f];
        let (dlo, dhi) = bwd_interior(s.f, s.f_out, pf0, s.kw);
        parallel::par_chunks_mut(&mut dxv, s.t * s.f, |idx, dxp| {
            let n = idx / s.c;
            let c = idx % s.c;
            for to in 0..s.t_out {
                for k in 0..s.k {
                    let grow = &gd[((n * s.k + k) * s.t_out + to) * s.f_out..][..s.f_out];
                    let wp = &wd[(k * s.c + c) * s.kh * s.kw..][..s.kh * s.kw];
                    for dy in 0..s.kh {
                        let ti = to * st + dy;
                        if ti < pt0 || ti - pt0 >= s.t {
                            continue;
                        }
                        let ti = ti - pt0;
                        let drow = &mut dxp[ti * s.f..(ti + 1) * s.f];
                        let wrow = &wp[dy * s.kw..(dy + 1) * s.kw];
                        if s.kw == 4 && sf == 1 && dhi > dlo {
                            // dIn[fi] += sum_dx w[dx] g[fi + pf0 - dx]: reversed taps
                            stencil4_add(
                                &mut drow[dlo..dhi],
                                &grow[dlo + pf0 - 3..],
                                [wrow[3], wrow[2], wrow[1], wrow[0]],
                            );
                        }
                        for dx_k in 0..s.kw {
                            let wv = wrow[dx_k];
                            let (fo_lo, fo_hi) = out_range(s.f_out, s.f, pf0, dx_k, sf);
                            if fo_lo >= fo_hi {
                                continue;
                            }
                            if s.kw == 4 && sf == 1 {
                                // borders: skip fo whose dIn column fell in [dlo, dhi)
                                let cov_lo = (dlo + pf0).saturating_sub(dx_k);
                                let cov_hi = (dhi + pf0).saturating_sub(dx_k);
                                let left_hi = fo_hi.min(cov_lo.max(fo_lo));
                                if fo_lo < left_hi {
                                    let fi0 = fo_lo + dx_k - pf0;
                                    saxpy(&mut drow[fi0..fi0 + (left_hi - fo_lo)], &grow[fo_lo..left_hi], wv);
                                }
                                let right_lo = fo_lo.max(cov_hi.min(fo_hi));
                                if right_lo < fo_hi {
                                    let fi0 = right_lo + dx_k - pf0;
                                    saxpy(&mut drow[fi0..fi0 + (fo_hi - right_lo)], &grow[right_lo..fo_hi], wv);
                                }
                            } else if sf == 1 {
                                let fi0 = fo_lo + dx_k - pf0;
                                saxpy(&mut drow[fi0..fi0 + (fo_hi - fo_lo)], &grow[fo_lo..fo_hi], wv);
                            } else {
                                for fo in fo_lo..fo_hi {
                                    drow[fo * sf + dx_k - pf0] += wv * grow[fo];
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(vec![s.n, s.c, s.t, s.f], dxv)?)
    } else {
        None
    };

    let dw = if need.1 {
        let mut dwv = vec![0.0; s.k * s.c * s.kh * s.kw];
        let (ilo, ihi) = fwd_interior(s.f, s.f_out, pf0, s.kw);
        parallel::par_chunks_mut(&mut dwv, s.c * s.kh * s.kw, |k, dwp| {
            for n in 0..s.n {
                let gp = &gd[(n * s.k + k) * go_plane..][..go_plane];
                for to in 0..s.t_out {
                    let grow = &gp[to * s.f_out..(to + 1) * s.f_out];
                    for c in 0..s.c {
                        let xp = &xd[(n * s.c + c) * s.t * s.f..][..s.t * s.f];
                        for dy in 0..s.kh {
                            let ti = to * st + dy;
                            if ti < pt0 || ti - pt0 >= s.t {
                                continue;
                            }
                            let ti = ti - pt0;
                            let xrow = &xp[ti * s.f..(ti + 1) * s.f];
                            let dwrow = &mut dwp[c * s.kh * s.kw + dy * s.kw..][..s.kw];
                            if s.kw == 4 && sf == 1 {
                                if ihi > ilo {
                                    let mut acc = [0.0; 4];
                                    quad_dot(&grow[ilo..ihi], &xrow[ilo - pf0..], &mut acc);
                                    for (w, a) in dwrow.iter_mut().zip(acc) {
                                        *w += a;
                                    }
                                }
                                for (dx_k, w) in dwrow.iter_mut().enumerate() {
                                    let (fo_lo, fo_hi) = out_range(s.f_out, s.f, pf0, dx_k, sf);
                                    let left_hi = fo_hi.min(ilo.max(fo_lo));
                                    if fo_lo < left_hi {
                                        let fi0 = fo_lo + dx_k - pf0;
                                        *w += dot(&grow[fo_lo..left_hi], &xrow[fi0..fi0 + (left_hi - fo_lo)]);
                                    }
                                    let right_lo = fo_lo.max(ihi.min(fo_hi));
                                    if right_lo < fo_hi {
                                        let fi0 = right_lo + dx_k - pf0;
                                        *w += dot(&grow[right_lo..fo_hi], &xrow[fi0..fi0 + (fo_hi - right_lo)]);
                                    }
                                }
                            } else {
                                for (dx_k, w) in dwrow.iter_mut().enumerate() {
                                    let (fo_lo, fo_hi) = out_range(s.f_out, s.f, pf0, dx_k, sf);
                                    if fo_lo >= fo_hi {
                                        continue;
                                    }
                                    if sf == 1 {
                                        let fi0 = fo_lo + dx_k - pf0;
                                        *w += dot(&grow[fo_lo..fo_hi], &xrow[fi0..fi0 + (fo_hi - fo_lo)]);
                                    } else {
                                        let mut a = 0.0;
                                        for fo in fo_lo..fo_hi {
                                            a += grow[fo] * xrow[fo * sf + dx_k - pf0];
                                        }
                                        *w += a;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(vec![s.k, s.c, s.kh, s.kw], dwv)?)
    } else {
        None
    };

    let db = if need.2 {
        let sums = parallel::par_map(s.k, |k| {
            let mut acc = 0.0;
            for n in 0..s.n {
                acc += lane_sum(&gd[(n * s.k + k) * go_plane..][..go_plane]);
            }
            acc
        });
        Some(Tensor::new(vec![s.k], sums)?)
    } else {
        None
    };

    Ok((dx, dw, db))
}

/// Replicate the first/last time rows `before`/`after` times. Keeps
/// time-constant inputs exactly constant through padded convolutions, which is
/// what makes encoder outputs exactly duration-independent for such inputs.
pub fn pad_time_edge_forward(x: &Tensor, before: usize, after: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("pad_time_edge", format!("input must be [N,C,T,F], got {xs:?}")));
    }
    let (n, c, t, f) = (xs[0], xs[1], xs[2], xs[3]);
    let t_out = t + before + after;
    let xd = x.data();
    let mut out = vec![0.0; n * c * t_out * f];
    parallel::par_chunks_mut(&mut out, t_out * f, |idx, o| {
        let xp = &xd[idx * t * f..][..t * f];
        for to in 0..t_out {
            let ti = to.saturating_sub(before).min(t - 1);
            o[to * f..(to + 1) * f].copy_from_slice(&xp[ti * f..(ti + 1) * f]);
        }
    });
    Tensor::new(vec![n, c, t_out, f], out)
}

pub fn pad_time_edge_backward(
    x_shape: &[usize],
    before: usize,
    after: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (n, c, t, f) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let t_out = t + before + after;
    let gd = grad_out.data();
    let mut dx = vec![0.0; n * c * t * f];
    parallel::par_chunks_mut(&mut dx, t * f, |idx, dxp| {
        let gp = &gd[idx * t_out * f..][..t_out * f];
        for to in 0..t_out {
            let ti = to.saturating_sub(before).min(t - 1);
            saxpy(&mut dxp[ti * f..(ti + 1) * f], &gp[to * f..(to + 1) * f], 1.0);
        }
    });
    Tensor::new(vec![n, c, t, f], dx)
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

pub fn maxpool_time_forward(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("maxpool_time", format!("input must be [N,C,T,F], got {xs:?}")));
    }
    let (n, c, t, f) = (xs[0], xs[1], xs[2], xs[3]);
    if t < k {
        return Err(Error::shape(
            "maxpool_time",
            format!("time dimension (dim 2): length {t} shorter than pool window {k}"),
        ));
    }
    let t_out = (t - k) / stride + 1;
    let xd = x.data();
    let mut out = vec![0.0; n * c * t_out * f];
    parallel::par_chunks_mut(&mut out, t_out * f, |idx, o| {
        let xp = &xd[idx * t * f..][..t * f];
        for to in 0..t_out {
            let ti0 = to * stride;
            let orow = &mut o[to * f..(to + 1) * f];
            orow.copy_from_slice(&xp[ti0 * f..(ti0 + 1) * f]);
            for dy in 1..k {
                let xrow = &xp[(ti0 + dy) * f..(ti0 + dy + 1) * f];
                for (ov, xv) in orow.iter_mut().zip(xrow) {
                    if *xv > *ov {
                        *ov = *xv;
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, c, t_out, f], out)
}

/// Routes each output gradient to the first time index attaining the window
/// maximum (ties break toward the earliest element).
pub fn maxpool_time_backward(x: &Tensor, k: usize, stride: usize, grad_out: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let (n, c, t, f) = (xs[0], xs[1], xs[2], xs[3]);
    let t_out = (t - k) / stride + 1;
    let (xd, gd) = (x.data(), grad_out.data());
    let mut dx = vec![0.0; n * c * t * f];
    parallel::par_chunks_mut(&mut dx, t * f, |idx, dxp| {
        let xp = &xd[idx * t * f..][..t * f];
        let gp = &gd[idx * t_out * f..][..t_out * f];
        for to in 0..t_out {
            let ti0 = to * stride;
            let grow = &gp[to * f..(to + 1) * f];
            if k == 2 {
                // branchless two-row split; ties go to the earlier row
                let (head, tail) = dxp.split_at_mut((ti0 + 1) * f);
                let d0 = &mut head[ti0 * f..];
                let d1 = &mut tail[..f];
                let r0 = &xp[ti0 * f..(ti0 + 1) * f];
                let r1 = &xp[(ti0 + 1) * f..(ti0 + 2) * f];
                for i in 0..f {
                    let first = r0[i] >= r1[i];
                    d0[i] += if first { grow[i] } else { 0.0 };
                    d1[i] += if first { 0.0 } else { grow[i] };
                }
            } else {
                for fi in 0..f {
                    let mut best = xp[ti0 * f + fi];
                    let mut arg = 0;
                    for dy in 1..k {
                        let v = xp[(ti0 + dy) * f + fi];
                        if v > best {
                            best = v;
                            arg = dy;
                        }
                    }
                    dxp[(ti0 + arg) * f + fi] += grow[fi];
                }
            }
        }
    });
    Tensor::new(vec![n, c, t, f], dx)
}

pub fn avgpool_all_time_forward(x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("avgpool_all_time", format!("input must be [N,C,T,F], got {xs:?}")));
    }
    let (n, c, t, f) = (xs[0], xs[1], xs[2], xs[3]);
    let xd = x.data();
    let mut out = vec![0.0; n * c * f];
    parallel::par_chunks_mut(&mut out, f, |idx, o| {
        let xp = &xd[idx * t * f..][..t * f];
        for ti in 0..t {
            saxpy(o, &xp[ti * f..(ti + 1) * f], 1.0);
        }
        let inv = 1.0 / t as f64;
        o.iter_mut().for_each(|v| *v *= inv);
    });
    Tensor::new(vec![n, c, 1, f], out)
}

pub fn avgpool_all_time_backward(t: usize, x_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, f) = (x_shape[0], x_shape[1], x_shape[3]);
    let gd = grad_out.data();
    let inv = 1.0 / t as f64;
    let mut dx = vec![0.0; n * c * t * f];
    parallel::par_chunks_mut(&mut dx, t * f, |idx, dxp| {
        let grow = &gd[idx * f..][..f];
        for ti in 0..t {
            let drow = &mut dxp[ti * f..(ti + 1) * f];
            for (d, g) in drow.iter_mut().zip(grow) {
                *d = g * inv;
            }
        }
    });
    Tensor::new(vec![n, c, t, f], dx)
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BnSaved {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Biased per-channel batch variance (for the running-average update).
    pub var: Vec<f64>,
}

fn bn_shape(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("batchnorm", format!("input must be [N,C,T,F], got {xs:?}")));
    }
    Ok((xs[0], xs[1], xs[2], xs[3]))
}

/// Train-mode batch normalization using two-pass batch statistics per channel
/// over the `(N, T, F)` axes.
pub fn batchnorm_train_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BnSaved)> {
    let (n, c, t, f) = bn_shape(x)?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("gamma/beta length {}/{} != channels {c} (dim 1)", gamma.numel(), beta.numel()),
        ));
    }
    let m = n * t * f;
    if m < 2 {
        return Err(Error::DegenerateBatch);
    }
    let xd = x.data();
    let plane = t * f;

    let stats = parallel::par_map(c, |ci| {
        let mut sum = 0.0;
        for ni in 0..n {
            sum += lane_sum(&xd[(ni * c + ci) * plane..][..plane]);
        }
        let mean = sum / m as f64;
        let mut ss = 0.0;
        for ni in 0..n {
            ss += lane_sq_dev(&xd[(ni * c + ci) * plane..][..plane], mean);
        }
        let var = ss / m as f64;
        (mean, var)
    });
    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![0.0; xd.len()];
    parallel::par_chunks_mut(&mut out, plane, |idx, o| {
        let ci = idx % c;
        let xp = &xd[idx * plane..][..plane];
        let (mu, inv, g, b) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
        for (ov, xv) in o.iter_mut().zip(xp) {
            *ov = g * (xv - mu) * inv + b;
        }
    });
    Ok((
        Tensor::new(vec![n, c, t, f], out)?,
        BnSaved { mean, inv_std, var },
    ))
}

/// Eval-mode batch normalization using fixed running statistics.
pub fn batchnorm_eval_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<(Tensor, BnSaved)> {
    let (n, c, t, f) = bn_shape(x)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("running stats length {} != channels {c} (dim 1)", running_mean.len()),
        ));
    }
    let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let plane = t * f;
    let mut out = vec![0.0; xd.len()];
    parallel::par_chunks_mut(&mut out, plane, |idx, o| {
        let ci = idx % c;
        let xp = &xd[idx * plane..][..plane];
        let (mu, inv, g, b) = (running_mean[ci], inv_std[ci], gd[ci], bd[ci]);
        for (ov, xv) in o.iter_mut().zip(xp) {
            *ov = g * (xv - mu) * inv + b;
        }
    });
    Ok((
        Tensor::new(vec![n, c, t, f], out)?,
        BnSaved {
            mean: running_mean.to_vec(),
            inv_std,
            var: running_var.to_vec(),
        },
    ))
}

/// Backward through batch statistics (train mode): exact, not straight-through.
pub fn batchnorm_train_backward(
    x: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, t, f) = bn_shape(x)?;
    let m = (n * t * f) as f64;
    let plane = t * f;
    let (xd, gd, god) = (x.data(), gamma.data(), grad_out.data());

    // Per-channel reductions: sum of g and of g * xhat.
    let sums = parallel::par_map(c, |ci| {
        let (mu, inv) = (saved.mean[ci], saved.inv_std[ci]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            let (g, gx) = lane_sum_g_gx(&xd[base..base + plane], &god[base..base + plane], mu, inv);
            sum_g += g;
            sum_gx += gx;
        }
        (sum_g, sum_gx)
    });

    let mut dx = vec![0.0; xd.len()];
    parallel::par_chunks_mut(&mut dx, plane, |idx, dxp| {
        let ci = idx % c;
        let (mu, inv, g) = (saved.mean[ci], saved.inv_std[ci], gd[ci]);
        let (sum_g, sum_gx) = sums[ci];
        let xp = &xd[idx * plane..][..plane];
        let gp = &god[idx * plane..][..plane];
        let k1 = sum_g / m;
        let k2 = sum_gx / m;
        for ((dv, xv), gv) in dxp.iter_mut().zip(xp).zip(gp) {
            let xhat = (xv - mu) * inv;
            *dv = g * inv * (gv - k1 - xhat * k2);
        }
    });

    let dgamma: Vec<f64> = sums.iter().map(|s| s.1).collect();
    let dbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
    Ok((
        Tensor::new(vec![n, c, t, f], dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Backward with running statistics treated as constants (eval mode).
pub fn batchnorm_eval_backward(
    x: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, t, f) = bn_shape(x)?;
    let plane = t * f;
    let (xd, gd, god) = (x.data(), gamma.data(), grad_out.data());
    let sums = parallel::par_map(c, |ci| {
        let (mu, inv) = (saved.mean[ci], saved.inv_std[ci]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            let (g, gx) = lane_sum_g_gx(&xd[base..base + plane], &god[base..base + plane], mu, inv);
            sum_g += g;
            sum_gx += gx;
        }
        (sum_g, sum_gx)
    });
    let mut dx = vec![0.0; xd.len()];
    parallel::par_chunks_mut(&mut dx, plane, |idx, dxp| {
        let ci = idx % c;
        let scale = gd[ci] * saved.inv_std[ci];
        let gp = &god[idx * plane..][..plane];
        for (dv, gv) in dxp.iter_mut().zip(gp) {
            *dv = scale * gv;
        }
    });
    Ok((
        Tensor::new(vec![n, c, t, f], dx)?,
        Tensor::new(vec![c], sums.iter().map(|s| s.1).collect())?,
        Tensor::new(vec![c], sums.iter().map(|s| s.0).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// dense / elementwise
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn relu_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data: Vec<f64> = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&yv, &gv)| if yv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

pub fn linear_check(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::shape("linear", format!("need [N,D] x [D,D'], got {xs:?} x {ws:?}")));
    }
    if xs[1] != ws[0] {
        return Err(Error::shape(
            "linear",
            format!("inner dimension: input D={} (dim 1), weight D={} (dim 0)", xs[1], ws[0]),
        ));
    }
    if b.shape() != [ws[1]] {
        return Err(Error::shape(
            "linear",
            format!("bias dimension: got {:?}, weight has D'={} (dim 1)", b.shape(), ws[1]),
        ));
    }
    Ok((xs[0], xs[1], ws[1]))
}

pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d, dp) = linear_check(x, w, b)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * dp];
    parallel::par_chunks_mut(&mut out, dp, |ni, row| {
        row.copy_from_slice(bd);
        let xrow = &xd[ni * d..(ni + 1) * d];
        for (di, &xv) in xrow.iter().enumerate() {
            if xv != 0.0 {
                saxpy(row, &wd[di * dp..(di + 1) * dp], xv);
            }
        }
    });
    Tensor::new(vec![n, dp], out)
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need: (bool, bool, bool),
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let xs = x.shape();
    let ws = w.shape();
    let (n, d, dp) = (xs[0], xs[1], ws[1]);
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());

    let dx = if need.0 {
        let mut dxv = vec![0.0; n * d];
        parallel::par_chunks_mut(&mut dxv, d, |ni, row| {
            let grow = &gd[ni * dp..(ni + 1) * dp];
            for (di, dv) in row.iter_mut().enumerate() {
                *dv = dot(grow, &wd[di * dp..(di + 1) * dp]);
            }
        });
        Some(Tensor::new(vec![n, d], dxv)?)
    } else {
        None
    };

    let dw = if need.1 {
        let mut dwv = vec![0.0; d * dp];
        parallel::par_chunks_mut(&mut dwv, dp, |di, row| {
            for ni in 0..n {
                let xv = xd[ni * d + di];
                if xv != 0.0 {
                    saxpy(row, &gd[ni * dp..(ni + 1) * dp], xv);
                }
            }
        });
        Some(Tensor::new(vec![d, dp], dwv)?)
    } else {
        None
    };

    let db = if need.2 {
        let mut dbv = vec![0.0; dp];
        for ni in 0..n {
            saxpy(&mut dbv, &gd[ni * dp..(ni + 1) * dp], 1.0);
        }
        Some(Tensor::new(vec![dp], dbv)?)
    } else {
        None
    };

    Ok((dx, dw, db))
}

fn rows_of(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match x.shape() {
        [d] => Ok((1, *d)),
        [n, d] => Ok((*n, *d)),
        s => Err(Error::shape(op, format!("need [D] or [N,D], got {s:?}"))),
    }
}

/// Row-wise temperature softmax with max subtraction.
pub fn softmax_t_forward(x: &Tensor, temp: f64) -> Result<Tensor> {
    let (n, d) = rows_of(x, "softmax_t")?;
    if temp <= 0.0 {
        return Err(Error::InvalidConfig("softmax temperature must be positive".into()));
    }
    let xd = x.data();
    let mut out = vec![0.0; n * d];
    for ni in 0..n {
        let row = &xd[ni * d..(ni + 1) * d];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[ni * d..(ni + 1) * d];
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = ((v - m) / temp).exp();
            sum += *o;
        }
        let inv = 1.0 / sum;
        orow.iter_mut().for_each(|o| *o *= inv);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_t_backward(y: &Tensor, temp: f64, grad_out: &Tensor) -> Result<Tensor> {
    let (n, d) = rows_of(y, "softmax_t")?;
    let (yd, gd) = (y.data(), grad_out.data());
    let mut dx = vec![0.0; n * d];
    for ni in 0..n {
        let yrow = &yd[ni * d..(ni + 1) * d];
        let grow = &gd[ni * d..(ni + 1) * d];
        let inner = dot(yrow, grow);
        let drow = &mut dx[ni * d..(ni + 1) * d];
        for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
            *dv = yv * (gv - inner) / temp;
        }
    }
    Tensor::new(y.shape().to_vec(), dx)
}

/// Row-wise unit normalization `v / ||v||_2`; errors on a zero-norm row.
pub fn unit_normalize_forward(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = rows_of(x, "unit_normalize")?;
    let xd = x.data();
    let mut out = vec![0.0; n * d];
    let mut norms = Vec::with_capacity(n);
    for ni in 0..n {
        let row = &xd[ni * d..(ni + 1) * d];
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormFeature);
        }
        let inv = 1.0 / norm;
        for (o, &v) in out[ni * d..(ni + 1) * d].iter_mut().zip(row) {
            *o = v * inv;
        }
        norms.push(norm);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, norms))
}

pub fn unit_normalize_backward(y: &Tensor, norms: &[f64], grad_out: &Tensor) -> Result<Tensor> {
    let (n, d) = rows_of(y, "unit_normalize")?;
    let (yd, gd) = (y.data(), grad_out.data());
    let mut dx = vec![0.0; n * d];
    for ni in 0..n {
        let yrow = &yd[ni * d..(ni + 1) * d];
        let grow = &gd[ni * d..(ni + 1) * d];
        let inner = dot(yrow, grow);
        let inv = 1.0 / norms[ni];
        for ((dv, &yv), &gv) in dx[ni * d..(ni + 1) * d].iter_mut().zip(yrow).zip(grow) {
            *dv = (gv - yv * inner) * inv;
        }
    }
    Tensor::new(y.shape().to_vec(), dx)
}

fn paired_rows(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
    }
    rows_of(a, op)
}

/// Mean over rows of the per-row L1 distance.
pub fn l1_diff_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = paired_rows(a, b, "l1_diff")?;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for i in 0..n * d {
        total += (ad[i] - bd[i]).abs();
    }
    Ok(Tensor::scalar(total / n as f64))
}

pub fn l1_diff_backward(a: &Tensor, b: &Tensor, grad: f64) -> Result<(Tensor, Tensor)> {
    let (n, _) = paired_rows(a, b, "l1_diff")?;
    let scale = grad / n as f64;
    let (ad, bd) = (a.data(), b.data());
    let sign = |i: usize| {
        let diff = ad[i] - bd[i];
        if diff > 0.0 {
            scale
        } else if diff < 0.0 {
            -scale
        } else {
            0.0
        }
    };
    let da = Tensor::from_fn(a.shape(), sign);
    let db = scale_forward(&da, -1.0);
    Ok((da, db))
}

/// Mean over rows of the per-row squared L2 distance.
pub fn l2_sq_diff_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = paired_rows(a, b, "l2_sq_diff")?;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for i in 0..n * d {
        let diff = ad[i] - bd[i];
        total += diff * diff;
    }
    Ok(Tensor::scalar(total / n as f64))
}

pub fn l2_sq_diff_backward(a: &Tensor, b: &Tensor, grad: f64) -> Result<(Tensor, Tensor)> {
    let (n, _) = paired_rows(a, b, "l2_sq_diff")?;
    let scale = 2.0 * grad / n as f64;
    let (ad, bd) = (a.data(), b.data());
    let da = Tensor::from_fn(a.shape(), |i| scale * (ad[i] - bd[i]));
    let db = scale_forward(&da, -1.0);
    Ok((da, db))
}

#[derive(Debug, Clone)]
pub struct DistillSaved {
    pub p_target: Tensor,
    pub p_pred: Tensor,
}

/// Soft cross-entropy between temperature-softened rows: mean over rows of
/// `-sum_i p_i(a) log p_i(b)`. Stabilized; the target side carries no gradient.
pub fn distill_forward(target: &Tensor, pred: &Tensor, temp: f64) -> Result<(Tensor, DistillSaved)> {
    let (n, d) = paired_rows(target, pred, "distill_loss")?;
    if temp <= 0.0 {
        return Err(Error::InvalidConfig("distillation temperature must be positive".into()));
    }
    let p_target = softmax_t_forward(target, temp)?;
    let p_pred = softmax_t_forward(pred, temp)?;
    let (td, bd) = (p_target.data(), pred.data());
    let mut total = 0.0;
    for ni in 0..n {
        let brow = &bd[ni * d..(ni + 1) * d];
        let m = brow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lse = 0.0;
        for &v in brow {
            lse += ((v - m) / temp).exp();
        }
        let lse = lse.ln();
        let prow = &td[ni * d..(ni + 1) * d];
        let mut row_loss = 0.0;
        for (&p, &v) in prow.iter().zip(brow) {
            row_loss -= p * ((v - m) / temp - lse);
        }
        total += row_loss;
    }
    Ok((
        Tensor::scalar(total / n as f64),
        DistillSaved { p_target, p_pred },
    ))
}

pub fn distill_backward(saved: &DistillSaved, temp: f64, grad: f64) -> Result<Tensor> {
    let (n, _) = rows_of(&saved.p_pred, "distill_loss")?;
    let scale = grad / (temp * n as f64);
    let (pt, pp) = (saved.p_target.data(), saved.p_pred.data());
    Ok(Tensor::from_fn(saved.p_pred.shape(), |i| scale * (pp[i] - pt[i])))
}

pub fn add_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale_forward(a: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|v| c * v).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
