//! Batched layer kernels. Inputs are flat row-major buffers with the batch as
//! the leading dimension.

use crate::tensor::{gemm, Scalar};

/// Geometry of one conv2d layer applied to a `[c, h, w]` sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Input coordinate for output position `o` and kernel tap `k`, if it
    /// falls inside the unpadded input.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + k;
        if p < self.pad || p - self.pad >= extent {
            None
        } else {
            Some(p - self.pad)
        }
    }
}

/// `y[b, o] = Σ_i x[b, i] · w[o, i]`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], w: &[T], batch: usize, in_dim: usize, out_dim: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * out_dim];
    gemm(
        batch,
        in_dim,
        out_dim,
        (x, in_dim, 1),
        (w, 1, in_dim),
        T::zero(),
        (&mut y, out_dim, 1),
    );
    y
}

/// Gradient w.r.t. the (effective) weight: `g[o, i] = Σ_b δ[b, o] · x[b, i]`.
pub(crate) fn linear_weight_grad<T: Scalar>(
    delta: &[T],
    x: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Vec<T> {
    let mut g = vec![T::zero(); out_dim * in_dim];
    gemm(
        out_dim,
        batch,
        in_dim,
        (delta, 1, out_dim),
        (x, in_dim, 1),
        T::zero(),
        (&mut g, in_dim, 1),
    );
    g
}

/// Gradient w.r.t. the input: `gx[b, i] = Σ_o δ[b, o] · w[o, i]`.
pub(crate) fn linear_input_grad<T: Scalar>(
    delta: &[T],
    w: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> Vec<T> {
    let mut gx = vec![T::zero(); batch * in_dim];
    gemm(
        batch,
        out_dim,
        in_dim,
        (delta, out_dim, 1),
        (w, in_dim, 1),
        T::zero(),
        (&mut gx, in_dim, 1),
    );
    gx
}

/// Direct convolution. Each output element accumulates its products in
/// `(ic, ky, kx)` order starting from zero, skipping padded taps.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], w: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut y = vec![T::zero(); batch * g.out_c * out_plane];
    for b in 0..batch {
        let xb = &x[b * g.in_c * in_plane..(b + 1) * g.in_c * in_plane];
        for oc in 0..g.out_c {
            let yo = &mut y[(b * g.out_c + oc) * out_plane..(b * g.out_c + oc + 1) * out_plane];
            for ic in 0..g.in_c {
                let xc = &xb[ic * in_plane..(ic + 1) * in_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.out_h {
                            let Some(iy) = g.src(oy, ky, g.in_h) else { continue };
                            let row = &xc[iy * g.in_w..(iy + 1) * g.in_w];
                            let yrow = &mut yo[oy * g.out_w..(oy + 1) * g.out_w];
                            for (ox, yv) in yrow.iter_mut().enumerate() {
                                if let Some(ix) = g.src(ox, kx, g.in_w) {
                                    *yv += row[ix] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_weight_grad<T: Scalar>(delta: &[T], x: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gw = vec![T::zero(); g.out_c * g.in_c * g.kh * g.kw];
    for b in 0..batch {
        for oc in 0..g.out_c {
            let d = &delta[(b * g.out_c + oc) * out_plane..(b * g.out_c + oc + 1) * out_plane];
            for ic in 0..g.in_c {
                let xc = &x[(b * g.in_c + ic) * in_plane..(b * g.in_c + ic + 1) * in_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let Some(iy) = g.src(oy, ky, g.in_h) else { continue };
                            for ox in 0..g.out_w {
                                if let Some(ix) = g.src(ox, kx, g.in_w) {
                                    acc += d[oy * g.out_w + ox] * xc[iy * g.in_w + ix];
                                }
                            }
                        }
                        gw[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

pub(crate) fn conv_input_grad<T: Scalar>(delta: &[T], w: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gx = vec![T::zero(); batch * g.in_c * in_plane];
    for b in 0..batch {
        for oc in 0..g.out_c {
            let d = &delta[(b * g.out_c + oc) * out_plane..(b * g.out_c + oc + 1) * out_plane];
            for ic in 0..g.in_c {
                let gxc = &mut gx[(b * g.in_c + ic) * in_plane..(b * g.in_c + ic + 1) * in_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.out_h {
                            let Some(iy) = g.src(oy, ky, g.in_h) else { continue };
                            for ox in 0..g.out_w {
                                if let Some(ix) = g.src(ox, kx, g.in_w) {
                                    gxc[iy * g.in_w + ix] += d[oy * g.out_w + ox] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn relu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Passes the gradient where the pre-activation was positive.
pub(crate) fn relu_backward<T: Scalar>(delta: &mut [T], pre: &[T]) {
    for (d, &p) in delta.iter_mut().zip(pre) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
}

/// `(channels, in_h, in_w, kernel)` for non-overlapping average pooling.
pub(crate) fn avgpool_forward<T: Scalar>(x: &[T], batch: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let norm = T::one() / T::of((k * k) as f64);
    let mut y = vec![T::zero(); batch * c * oh * ow];
    for bc in 0..batch * c {
        let xp = &x[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..k {
                    for kx in 0..k {
                        acc += xp[(oy * k + ky) * w + ox * k + kx];
                    }
                }
                y[(bc * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    y
}

pub(crate) fn avgpool_backward<T: Scalar>(delta: &[T], batch: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let norm = T::one() / T::of((k * k) as f64);
    let mut gx = vec![T::zero(); batch * c * h * w];
    for bc in 0..batch * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let d = delta[(bc * oh + oy) * ow + ox] * norm;
                for ky in 0..k {
                    for kx in 0..k {
                        gx[bc * h * w + (oy * k + ky) * w + ox * k + kx] = d;
                    }
                }
            }
        }
    }
    gx
}
