//! GEMM and im2col helpers for 3x3, stride-1 convolutions.

pub const K: usize = 3;
pub const KK: usize = K * K;

/// `c = op(a) * op(b) (+ c)` with row-major storage. `op(a)` is `m x k` and
/// `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major matrices of exactly those sizes.
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

/// Spatial geometry of a 3x3 stride-1 convolution mapping `src` to `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub src_h: usize,
    pub src_w: usize,
    pub pad: usize,
    pub dst_h: usize,
    pub dst_w: usize,
}

impl ConvGeom {
    pub fn new(src_h: usize, src_w: usize, pad: usize) -> Option<Self> {
        let dst_h = (src_h + 2 * pad).checked_sub(K - 1)?;
        let dst_w = (src_w + 2 * pad).checked_sub(K - 1)?;
        (dst_h > 0 && dst_w > 0).then_some(Self {
            src_h,
            src_w,
            pad,
            dst_h,
            dst_w,
        })
    }

    pub fn src_len(&self) -> usize {
        self.src_h * self.src_w
    }

    pub fn dst_len(&self) -> usize {
        self.dst_h * self.dst_w
    }

    /// Source pixel read by output `(oh, ow)` through kernel tap `(kh, kw)`.
    #[inline]
    fn tap(&self, oh: usize, ow: usize, kh: usize, kw: usize) -> Option<usize> {
        let ih = (oh + kh).checked_sub(self.pad)?;
        let iw = (ow + kw).checked_sub(self.pad)?;
        (ih < self.src_h && iw < self.src_w).then_some(ih * self.src_w + iw)
    }
}

/// Gathers channels `c0..c0 + cg` of a `[batch, channels, src_h, src_w]`
/// tensor into a `[cg * 9, batch * dst_len]` patch matrix.
pub fn im2col(x: &[f64], batch: usize, channels: usize, c0: usize, cg: usize, g: &ConvGeom) -> Vec<f64> {
    let cols_n = batch * g.dst_len();
    let mut cols = vec![0.0; cg * KK * cols_n];
    for c in 0..cg {
        for kh in 0..K {
            for kw in 0..K {
                let row = (c * KK + kh * K + kw) * cols_n;
                for b in 0..batch {
                    let src = &x[(b * channels + c0 + c) * g.src_len()..][..g.src_len()];
                    for oh in 0..g.dst_h {
                        for ow in 0..g.dst_w {
                            if let Some(i) = g.tap(oh, ow, kh, kw) {
                                cols[row + b * g.dst_len() + oh * g.dst_w + ow] = src[i];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a patch matrix back, accumulating into
/// channels `c0..c0 + cg` of `dst`.
pub fn col2im(cols: &[f64], dst: &mut [f64], batch: usize, channels: usize, c0: usize, cg: usize, g: &ConvGeom) {
    let cols_n = batch * g.dst_len();
    for c in 0..cg {
        for kh in 0..K {
            for kw in 0..K {
                let row = (c * KK + kh * K + kw) * cols_n;
                for b in 0..batch {
                    let out = &mut dst[(b * channels + c0 + c) * g.src_len()..][..g.src_len()];
                    for oh in 0..g.dst_h {
                        for ow in 0..g.dst_w {
                            if let Some(i) = g.tap(oh, ow, kh, kw) {
                                out[i] += cols[row + b * g.dst_len() + oh * g.dst_w + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[batch, channels, hw]` channels `c0..c0+cg` -> `[cg, batch * hw]`.
pub fn to_channel_major(x: &[f64], batch: usize, channels: usize, c0: usize, cg: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; cg * batch * hw];
    for c in 0..cg {
        for b in 0..batch {
            out[(c * batch + b) * hw..][..hw].copy_from_slice(&x[(b * channels + c0 + c) * hw..][..hw]);
        }
    }
    out
}

/// Inverse of [`to_channel_major`], accumulating or overwriting into `dst`.
#[allow(clippy::too_many_arguments)]
pub fn from_channel_major(
    src: &[f64],
    dst: &mut [f64],
    batch: usize,
    channels: usize,
    c0: usize,
    cg: usize,
    hw: usize,
    accumulate: bool,
) {
    for c in 0..cg {
        for b in 0..batch {
            let s = &src[(c * batch + b) * hw..][..hw];
            let d = &mut dst[(b * channels + c0 + c) * hw..][..hw];
            if accumulate {
                d.iter_mut().zip(s).for_each(|(d, s)| *d += s);
            } else {
                d.copy_from_slice(s);
            }
        }
    }
}
