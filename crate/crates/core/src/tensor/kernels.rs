//! Forward and adjoint kernels for the tape primitives, written on raw
//! row-major buffers.

use std::any::Any;
use std::cell::RefCell;

use crate::scalar::Scalar;

thread_local! {
    static SCRATCH: RefCell<Vec<Box<dyn Any>>> = const { RefCell::new(Vec::new()) };
}

/// Runs `f` on a reusable per-thread buffer of `n` elements with
/// unspecified contents.
fn with_scratch<T: Scalar, R>(n: usize, f: impl FnOnce(&mut [T]) -> R) -> R {
    let mut buf: Vec<T> = SCRATCH.with(|pool| {
        let mut pool = pool.borrow_mut();
        match pool.iter().position(|b| b.is::<Vec<T>>()) {
            Some(i) => *pool.swap_remove(i).downcast::<Vec<T>>().expect("type checked"),
            None => Vec::new(),
        }
    });
    if buf.len() < n {
        buf.resize(n, T::zero());
    }
    let r = f(&mut buf[..n]);
    SCRATCH.with(|pool| pool.borrow_mut().push(Box::new(buf)));
    r
}

/// Offsets into a broadcast operand for every position of the output.
///
/// `small` has the same rank as `out`; each of its extents is either equal
/// to the output extent or 1.
pub(crate) fn broadcast_offsets(out: &[usize], small: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let first = small.iter().position(|&e| e != 1);
    let last = small.iter().rposition(|&e| e != 1);
    if let (Some(f), Some(l)) = (first, last) {
        if small[f..=l] == out[f..=l] {
            let mid: usize = out[f..=l].iter().product();
            let inner: usize = out[l + 1..].iter().product();
            return (0..n).map(|i| (i / inner) % mid).collect();
        }
    } else {
        return vec![0; n];
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    offsets
}

/// Sums `grad` (output-shaped) down to the broadcast operand.
pub(crate) fn reduce_to<T: Scalar>(grad: &[T], offsets: &[usize], small_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); small_len];
    for (&g, &o) in grad.iter().zip(offsets) {
        out[o] = out[o] + g;
    }
    out
}

/// Geometry of a stride-1, zero "same"-padded 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let pad = (k / 2) as isize;
    let plane = g.plane();
    for c in 0..g.in_ch {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                for y in 0..h {
                    let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    let sy = y + dy;
                    if sy < 0 || sy >= h || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    let s0 = (sy * w + x_lo as isize + dx) as usize;
                    line[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.plane());
    let mut out = Vec::with_capacity(g.batch * g.out_ch * plane);
    for _ in 0..g.batch {
        for o in 0..g.out_ch {
            let v = bias.map_or(T::zero(), |b| b[o]);
            out.extend(std::iter::repeat_n(v, plane));
        }
    }
    with_scratch(patch * plane, |cols: &mut [T]| {
        for b in 0..g.batch {
            im2col(g, &x[b * g.in_ch * plane..(b + 1) * g.in_ch * plane], cols);
            T::gemm(
                g.out_ch,
                patch,
                plane,
                T::one(),
                w,
                (patch as isize, 1),
                cols,
                (plane as isize, 1),
                T::one(),
                &mut out[b * g.out_ch * plane..(b + 1) * g.out_ch * plane],
                (plane as isize, 1),
            );
        }
    });
    out
}

/// Weights of the adjoint convolution: channels swapped, taps rotated 180°.
fn flip_transpose<T: Scalar>(g: &ConvGeom, w: &[T]) -> Vec<T> {
    let kk = g.kernel * g.kernel;
    let mut out = vec![T::zero(); w.len()];
    for o in 0..g.out_ch {
        for c in 0..g.in_ch {
            for t in 0..kk {
                out[(c * g.out_ch + o) * kk + (kk - 1 - t)] = w[(o * g.in_ch + c) * kk + t];
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let plane = g.plane();
    let mut db = vec![T::zero(); g.out_ch];
    for b in 0..g.batch {
        let gb = &grad[b * g.out_ch * plane..(b + 1) * g.out_ch * plane];
        for (o, d) in db.iter_mut().enumerate() {
            *d = *d + gb[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
    }
    let dw = need_dw.then(|| {
        let patch = g.patch();
        let mut dw = vec![T::zero(); w.len()];
        with_scratch(patch * plane, |cols: &mut [T]| {
            for b in 0..g.batch {
                im2col(g, &x[b * g.in_ch * plane..(b + 1) * g.in_ch * plane], cols);
                // dw (O x P) += grad_b (O x HW) * cols^T (HW x P)
                T::gemm(
                    g.out_ch,
                    plane,
                    patch,
                    T::one(),
                    &grad[b * g.out_ch * plane..(b + 1) * g.out_ch * plane],
                    (plane as isize, 1),
                    cols,
                    (1, plane as isize),
                    T::one(),
                    &mut dw,
                    (patch as isize, 1),
                );
            }
        });
        dw
    });
    let dx = need_dx.then(|| {
        // The input gradient is a same-padded convolution of `grad` with
        // the flipped, transposed kernel.
        let adj = ConvGeom {
            in_ch: g.out_ch,
            out_ch: g.in_ch,
            ..*g
        };
        conv2d_forward(&adj, grad, &flip_transpose(g, w), None)
    });
    (dx, dw, db)
}

/// Per-(batch, group) mean and reciprocal standard deviation.
pub(crate) struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// `x` is `(batch, channels, spatial)` flattened.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, GroupStats<T>) {
    let cpg = channels / groups;
    let n = T::lit((cpg * spatial) as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(batch * groups);
    let mut rstd = Vec::with_capacity(batch * groups);
    for b in 0..batch {
        for g in 0..groups {
            let lo = (b * channels + g * cpg) * spatial;
            let hi = lo + cpg * spatial;
            let seg = &x[lo..hi];
            let mu = seg.iter().copied().sum::<T>() / n;
            let var = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            for c in 0..cpg {
                let ch = g * cpg + c;
                let (ga, be) = (gamma[ch], beta[ch]);
                let base = lo + c * spatial;
                for i in base..base + spatial {
                    out[i] = (x[i] - mu) * r * ga + be;
                }
            }
            mean.push(mu);
            rstd.push(r);
        }
    }
    (out, GroupStats { mean, rstd })
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Scalar>(
    x: &[T],
    grad: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[T],
    stats: &GroupStats<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cpg = channels / groups;
    let n = T::lit((cpg * spatial) as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for b in 0..batch {
        for g in 0..groups {
            let k = b * groups + g;
            let (mu, r) = (stats.mean[k], stats.rstd[k]);
            let lo = (b * channels + g * cpg) * spatial;
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for c in 0..cpg {
                let ch = g * cpg + c;
                let base = lo + c * spatial;
                let (mut dg, mut db) = (T::zero(), T::zero());
                for i in base..base + spatial {
                    let xhat = (x[i] - mu) * r;
                    let dxhat = grad[i] * gamma[ch];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    dg = dg + grad[i] * xhat;
                    db = db + grad[i];
                }
                dgamma[ch] = dgamma[ch] + dg;
                dbeta[ch] = dbeta[ch] + db;
            }
            for c in 0..cpg {
                let ch = g * cpg + c;
                let base = lo + c * spatial;
                for i in base..base + spatial {
                    let xhat = (x[i] - mu) * r;
                    let dxhat = grad[i] * gamma[ch];
                    dx[i] = r / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 average pooling over the trailing two axes of `(planes, h, w)`.
pub(crate) fn avg_pool2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]: spreads each gradient over its 2x2 block.
pub(crate) fn avg_pool2_adjoint<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[p * h * w + y * w + xx] = g[p * oh * ow + (y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling of `(planes, h, w)`.
pub(crate) fn upsample2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                out[p * oh * ow + y * ow + xx] = x[p * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `h, w` are the *input* extents of the forward op.
pub(crate) fn upsample2_adjoint<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                let d = &mut out[p * h * w + (y / 2) * w + xx / 2];
                *d = *d + g[p * oh * ow + y * ow + xx];
            }
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
