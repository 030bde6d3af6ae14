//! Convolution, pooling and upsampling kernels. Convolution lowers to an
//! im2col buffer plus a GEMM so the hot path stays in the tuned matmul.

use crate::array::Scalar;

pub struct ConvDims {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn new(x: &[usize], wt: &[usize], stride: usize, pad: usize) -> ConvDims {
        let (ci, h, w) = (x[0], x[1], x[2]);
        let (co, kh, kw) = (wt[0], wt[2], wt[3]);
        ConvDims {
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        }
    }

    pub fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    pub fn n(&self) -> usize {
        self.oh * self.ow
    }
}

/// Fill `col` (`[oh*ow, ci*kh*kw]` row-major) from `x` (`[ci, h, w]`),
/// zero-padding out-of-bounds taps.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let k = d.k();
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let row = (oy * d.ow + ox) * k;
            let iy0 = (oy * d.stride) as isize - d.pad as isize;
            let ix0 = (ox * d.stride) as isize - d.pad as isize;
            let mut slot = row;
            for c in 0..d.ci {
                let plane = c * d.h * d.w;
                for ky in 0..d.kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= d.h as isize {
                        col[slot..slot + d.kw].fill(T::ZERO);
                        slot += d.kw;
                        continue;
                    }
                    let base = plane + iy as usize * d.w;
                    for kx in 0..d.kw {
                        let ix = ix0 + kx as isize;
                        col[slot] = if ix < 0 || ix >= d.w as isize {
                            T::ZERO
                        } else {
                            x[base + ix as usize]
                        };
                        slot += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add a `[ci*kh*kw, oh*ow]` gradient-columns buffer back onto the
/// input layout. Tap-major layout keeps both sides of the accumulation
/// contiguous for unit stride.
fn col2im_acc_kn<T: Scalar>(dcol: &[T], d: &ConvDims, dx: &mut [T]) {
    let n = d.n();
    for c in 0..d.ci {
        let plane = c * d.h * d.w;
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let tap = (c * d.kh + ky) * d.kw + kx;
                let row = &dcol[tap * n..(tap + 1) * n];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = plane + iy as usize * d.w;
                    let src = &row[oy * d.ow..(oy + 1) * d.ow];
                    if d.stride == 1 {
                        // ix = ox + kx - pad stays in range for this ox window
                        let lo = d.pad.saturating_sub(kx);
                        let hi = (d.w + d.pad - kx).min(d.ow);
                        let shift = kx as isize - d.pad as isize;
                        for ox in lo..hi {
                            let i = base + (ox as isize + shift) as usize;
                            dx[i] = dx[i] + src[ox];
                        }
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                let i = base + ix as usize;
                                dx[i] = dx[i] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[co, oh, ow] = weight * x + bias`, with `scratch` reused for im2col.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    d: &ConvDims,
    scratch: &mut Vec<T>,
    out: &mut [T],
) {
    let (k, n) = (d.k(), d.n());
    scratch.resize(n * k, T::ZERO);
    im2col(x, d, scratch);
    // out[co, n] = weight[co, k] . col^T[k, n]
    T::gemm_acc(
        d.co, k, n, weight, k as isize, 1, scratch, 1, k as isize, T::ZERO, out,
    );
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * n..(c + 1) * n] {
            *v = *v + b;
        }
    }
}

/// Accumulate gradients for input, weight and bias. `col` is the im2col
/// buffer kept from the forward pass (refilled when empty); `dcol_scratch`
/// holds the input-gradient columns. Passing `dx: None` skips the
/// input-gradient path entirely.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    d: &ConvDims,
    d_out: &[T],
    col: &[T],
    refill: &mut Vec<T>,
    dcol_scratch: &mut Vec<T>,
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    let (k, n) = (d.k(), d.n());
    let col: &[T] = if col.len() == n * k {
        col
    } else {
        refill.resize(n * k, T::ZERO);
        im2col(x, d, refill);
        refill
    };
    // dW[co, k] += dOut[co, n] . col[n, k]
    T::gemm_acc(
        d.co, n, k, d_out, n as isize, 1, col, k as isize, 1, T::ONE, dw,
    );
    // db[co] += sum_n dOut[co, n]
    for c in 0..d.co {
        let mut acc = T::ZERO;
        for &g in &d_out[c * n..(c + 1) * n] {
            acc = acc + g;
        }
        db[c] = db[c] + acc;
    }
    if let Some(dx) = dx {
        // dcol[k, n] = W^T[k, co] . dOut[co, n]
        if dcol_scratch.len() < n * k {
            dcol_scratch.resize(n * k, T::ZERO);
        }
        T::gemm_acc(
            k, d.co, n, weight, 1, k as isize, d_out, n as isize, 1, T::ZERO,
            &mut dcol_scratch[..n * k],
        );
        col2im_acc_kn(&dcol_scratch[..n * k], d, dx);
    }
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Average pooling; `reflect` implies stride 1, odd kernel, same output size.
pub fn avg_pool_forward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    reflect: bool,
    out: &mut [T],
) {
    let inv = T::from_f64(1.0 / (k * k) as f64);
    if reflect {
        let half = (k as isize - 1) / 2;
        let hu = half as usize;
        for ch in 0..c {
            let plane = ch * h * w;
            for y in 0..h {
                let interior_y = y >= hu && y + hu < h;
                let row_out = plane + y * w;
                // interior: straight taps, no reflection arithmetic
                if interior_y && w > 2 * hu {
                    for x_ in hu..w - hu {
                        let mut acc = T::ZERO;
                        for ky in 0..k {
                            let base = plane + (y - hu + ky) * w + (x_ - hu);
                            for kx in 0..k {
                                acc = acc + x[base + kx];
                            }
                        }
                        out[row_out + x_] = acc * inv;
                    }
                }
                let borders = if interior_y && w > 2 * hu {
                    (0..hu).chain(w - hu..w).collect::<Vec<_>>()
                } else {
                    (0..w).collect()
                };
                for x_ in borders {
                    let mut acc = T::ZERO;
                    for ky in 0..k as isize {
                        let iy = reflect101(y as isize + ky - half, h);
                        for kx in 0..k as isize {
                            let ix = reflect101(x_ as isize + kx - half, w);
                            acc = acc + x[plane + iy * w + ix];
                        }
                    }
                    out[row_out + x_] = acc * inv;
                }
            }
        }
    } else {
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        for ch in 0..c {
            let plane = ch * h * w;
            let oplane = ch * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::ZERO;
                    for ky in 0..k {
                        let base = plane + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            acc = acc + x[base + kx];
                        }
                    }
                    out[oplane + oy * ow + ox] = acc * inv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn avg_pool_backward<T: Scalar>(
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    reflect: bool,
    d_out: &[T],
    dx: &mut [T],
) {
    let inv = T::from_f64(1.0 / (k * k) as f64);
    if reflect {
        let half = (k as isize - 1) / 2;
        let hu = half as usize;
        for ch in 0..c {
            let plane = ch * h * w;
            for y in 0..h {
                let interior_y = y >= hu && y + hu < h;
                if interior_y && w > 2 * hu {
                    for x_ in hu..w - hu {
                        let g = d_out[plane + y * w + x_] * inv;
                        for ky in 0..k {
                            let base = plane + (y - hu + ky) * w + (x_ - hu);
                            for kx in 0..k {
                                dx[base + kx] = dx[base + kx] + g;
                            }
                        }
                    }
                }
                let borders = if interior_y && w > 2 * hu {
                    (0..hu).chain(w - hu..w).collect::<Vec<_>>()
                } else {
                    (0..w).collect()
                };
                for x_ in borders {
                    let g = d_out[plane + y * w + x_] * inv;
                    for ky in 0..k as isize {
                        let iy = reflect101(y as isize + ky - half, h);
                        for kx in 0..k as isize {
                            let ix = reflect101(x_ as isize + kx - half, w);
                            let i = plane + iy * w + ix;
                            dx[i] = dx[i] + g;
                        }
                    }
                }
            }
        }
    } else {
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        for ch in 0..c {
            let plane = ch * h * w;
            let oplane = ch * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = d_out[oplane + oy * ow + ox] * inv;
                    for ky in 0..k {
                        let base = plane + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            dx[base + kx] = dx[base + kx] + g;
                        }
                    }
                }
            }
        }
    }
}

pub fn upsample_nearest_forward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    out: &mut [T],
) {
    let (oh, ow) = (h * f, w * f);
    for ch in 0..c {
        let plane = ch * h * w;
        let oplane = ch * oh * ow;
        for oy in 0..oh {
            let src_row = plane + (oy / f) * w;
            let dst_row = oplane + oy * ow;
            for ox in 0..ow {
                out[dst_row + ox] = x[src_row + ox / f];
            }
        }
    }
}

pub fn upsample_nearest_backward<T: Scalar>(
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    d_out: &[T],
    dx: &mut [T],
) {
    let (oh, ow) = (h * f, w * f);
    for ch in 0..c {
        let plane = ch * h * w;
        let oplane = ch * oh * ow;
        for oy in 0..oh {
            let src_row = plane + (oy / f) * w;
            let dst_row = oplane + oy * ow;
            for ox in 0..ow {
                let i = src_row + ox / f;
                dx[i] = dx[i] + d_out[dst_row + ox];
            }
        }
    }
}
