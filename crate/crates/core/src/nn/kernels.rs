//! Forward and backward kernels for the convolutional ops. All layouts are
//! NHWC; accumulation happens in `f64` and is narrowed once per output.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k_w) / self.stride + 1
    }

    fn in_index(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.in_h && ix < self.in_w).then_some((iy, ix))
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T]) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_stride = g.in_h * g.in_w * g.in_c;
    let out_stride = oh * ow * g.out_c;
    let mut out = vec![T::zero(); g.batch * out_stride];
    out.par_chunks_mut(out_stride.max(1))
        .zip(x.par_chunks(in_stride.max(1)))
        .for_each(|(out_n, x_n)| {
            let mut acc = vec![0.0f64; g.out_c];
            for oy in 0..oh {
                for ox in 0..ow {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for ky in 0..g.k_h {
                        for kx in 0..g.k_w {
                            let Some((iy, ix)) = g.in_index(oy, ky, ox, kx) else {
                                continue;
                            };
                            let x_px = &x_n[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                            let w_k = &w[(ky * g.k_w + kx) * g.in_c * g.out_c..];
                            for (ci, &xv) in x_px.iter().enumerate() {
                                let xv = xv.widen();
                                if xv == 0.0 {
                                    continue;
                                }
                                let w_row = &w_k[ci * g.out_c..][..g.out_c];
                                for (a, &wv) in acc.iter_mut().zip(w_row) {
                                    *a += xv * wv.widen();
                                }
                            }
                        }
                    }
                    let o = &mut out_n[(oy * ow + ox) * g.out_c..][..g.out_c];
                    for (dst, &a) in o.iter_mut().zip(&acc) {
                        *dst = T::narrow(a);
                    }
                }
            }
        });
    out
}

/// Returns `(d_input, d_weight)`; either is skipped when not requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_stride = g.in_h * g.in_w * g.in_c;
    let out_stride = oh * ow * g.out_c;
    let w_len = g.k_h * g.k_w * g.in_c * g.out_c;

    let per_example: Vec<(Vec<T>, Vec<f64>)> = (0..g.batch)
        .into_par_iter()
        .map(|n| {
            let x_n = &x[n * in_stride..][..in_stride];
            let dy_n = &dy[n * out_stride..][..out_stride];
            let mut dx = if want_dx { vec![0.0f64; in_stride] } else { Vec::new() };
            let mut dw = if want_dw { vec![0.0f64; w_len] } else { Vec::new() };
            for oy in 0..oh {
                for ox in 0..ow {
                    let g_px = &dy_n[(oy * ow + ox) * g.out_c..][..g.out_c];
                    if g_px.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    for ky in 0..g.k_h {
                        for kx in 0..g.k_w {
                            let Some((iy, ix)) = g.in_index(oy, ky, ox, kx) else {
                                continue;
                            };
                            let px = (iy * g.in_w + ix) * g.in_c;
                            let k_off = (ky * g.k_w + kx) * g.in_c * g.out_c;
                            for ci in 0..g.in_c {
                                let row = k_off + ci * g.out_c;
                                if want_dx {
                                    let w_row = &w[row..][..g.out_c];
                                    let s: f64 =
                                        w_row.iter().zip(g_px).map(|(a, b)| a.widen() * b.widen()).sum();
                                    dx[px + ci] += s;
                                }
                                if want_dw {
                                    let xv = x_n[px + ci].widen();
                                    if xv != 0.0 {
                                        for (d, &gv) in dw[row..][..g.out_c].iter_mut().zip(g_px) {
                                            *d += xv * gv.widen();
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (dx.into_iter().map(T::narrow).collect(), dw)
        })
        .collect();

    let dx = want_dx.then(|| {
        let mut out = Vec::with_capacity(g.batch * in_stride);
        for (dx_n, _) in &per_example {
            out.extend_from_slice(dx_n);
        }
        out
    });
    let dw = want_dw.then(|| {
        // Reduce in example order so the result is independent of scheduling.
        let mut acc = vec![0.0f64; w_len];
        for (_, dw_n) in &per_example {
            for (a, &d) in acc.iter_mut().zip(dw_n) {
                *a += d;
            }
        }
        acc.into_iter().map(T::narrow).collect()
    });
    (dx, dw)
}

#[derive(Clone, Debug)]
pub(crate) struct GroupNormCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

/// `x` is `[batch, spatial, channels]` flattened; channels split into
/// `groups` contiguous groups.
pub(crate) fn group_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    spatial: usize,
    channels: usize,
    groups: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, GroupNormCache) {
    let per_group = channels / groups;
    let count = (spatial * per_group) as f64;
    let mut mean = vec![0.0; batch * groups];
    let mut inv_std = vec![0.0; batch * groups];
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        let x_n = &x[n * spatial * channels..][..spatial * channels];
        for gi in 0..groups {
            let c0 = gi * per_group;
            let mut s = 0.0;
            for p in 0..spatial {
                for c in c0..c0 + per_group {
                    s += x_n[p * channels + c].widen();
                }
            }
            let m = s / count;
            let mut v = 0.0;
            for p in 0..spatial {
                for c in c0..c0 + per_group {
                    let d = x_n[p * channels + c].widen() - m;
                    v += d * d;
                }
            }
            let is = 1.0 / (v / count + GROUP_NORM_EPS).sqrt();
            mean[n * groups + gi] = m;
            inv_std[n * groups + gi] = is;
            let out_n = &mut out[n * spatial * channels..][..spatial * channels];
            for p in 0..spatial {
                for c in c0..c0 + per_group {
                    let i = p * channels + c;
                    let xh = (x_n[i].widen() - m) * is;
                    out_n[i] = T::narrow(xh * gamma[c].widen() + beta[c].widen());
                }
            }
        }
    }
    (out, GroupNormCache { mean, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    spatial: usize,
    channels: usize,
    groups: usize,
    gamma: &[T],
    cache: &GroupNormCache,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let per_group = channels / groups;
    let count = (spatial * per_group) as f64;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for n in 0..batch {
        let base = n * spatial * channels;
        for gi in 0..groups {
            let m = cache.mean[n * groups + gi];
            let is = cache.inv_std[n * groups + gi];
            let c0 = gi * per_group;
            let (mut sum_dxh, mut sum_dxh_xh) = (0.0, 0.0);
            for p in 0..spatial {
                for c in c0..c0 + per_group {
                    let i = base + p * channels + c;
                    let xh = (x[i].widen() - m) * is;
                    let g = dy[i].widen();
                    dgamma[c] += g * xh;
                    dbeta[c] += g;
                    let dxh = g * gamma[c].widen();
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                }
            }
            let (mean_dxh, mean_dxh_xh) = (sum_dxh / count, sum_dxh_xh / count);
            for p in 0..spatial {
                for c in c0..c0 + per_group {
                    let i = base + p * channels + c;
                    let xh = (x[i].widen() - m) * is;
                    let dxh = dy[i].widen() * gamma[c].widen();
                    dx[i] = T::narrow(is * (dxh - mean_dxh - xh * mean_dxh_xh));
                }
            }
        }
    }
    (
        dx,
        dgamma.into_iter().map(T::narrow).collect(),
        dbeta.into_iter().map(T::narrow).collect(),
    )
}
