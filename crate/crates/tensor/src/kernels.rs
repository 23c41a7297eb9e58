//! Plain loops behind the graph ops. Also used directly for tape-free
//! inference where recording a graph would be wasted work.

use crate::Scalar;

/// `out[m,n] += a[m,k] * b[k,n]`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out[m,n] += a[m,k] * b[n,k]^T`.
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`.
pub fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one `[C,H,W]` image into `[C*k*k, Ho*Wo]` patch columns.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let dst = &mut cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * wo + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.height
                            && (ix as usize) < g.width
                        {
                            img[(c * g.height + iy as usize) * g.width + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating.
pub fn col2im_acc<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let src = &cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        img[(c * g.height + iy as usize) * g.width + ix as usize] +=
                            src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Bilinear weights of a continuous grid coordinate. `coord` must already be
/// clamped to `[0, size-1]`. Returns `(i0, i1, t)` with value = (1-t)*v[i0] + t*v[i1].
pub fn lerp_cell<T: Scalar>(coord: T, size: usize) -> (usize, usize, T) {
    if size == 1 {
        return (0, 0, T::zero());
    }
    let max0 = size - 2;
    let f = coord.floor().to_usize().unwrap_or(0).min(max0);
    let t = coord - T::c(f as f64);
    (f, f + 1, t)
}

/// Output column range `[lo, hi)` for which input column `ox + kx - pad`
/// lies inside `[0, width)` in a stride-1 convolution.
#[inline]
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let wo = g.out_w();
    let lo = g.pad.saturating_sub(kx);
    let hi = (g.width + g.pad).saturating_sub(kx).min(wo);
    (lo, hi.max(lo))
}

/// Stride-1 convolution of one image, accumulating into `out[O,Ho,Wo]`.
pub fn conv_direct_acc<T: Scalar>(img: &[T], w: &[T], out: &mut [T], g: &ConvGeom, o: usize) {
    let (ho, wo, k, c) = (g.out_h(), g.out_w(), g.kernel, g.channels);
    for oc in 0..o {
        let dst = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..c {
            let src = &img[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((oc * c + ic) * k + ky) * k + kx];
                    let (lo, hi) = valid_cols(g, kx);
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let srow = &src[iy as usize * g.width + lo + kx - g.pad..][..hi - lo];
                        let drow = &mut dst[oy * wo + lo..oy * wo + hi];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Input gradient of [`conv_direct_acc`] for one image.
pub fn conv_direct_grad_input<T: Scalar>(grad: &[T], w: &[T], gx: &mut [T], g: &ConvGeom, o: usize) {
    let (ho, wo, k, c) = (g.out_h(), g.out_w(), g.kernel, g.channels);
    for oc in 0..o {
        let src = &grad[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..c {
            let dst = &mut gx[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((oc * c + ic) * k + ky) * k + kx];
                    let (lo, hi) = valid_cols(g, kx);
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.width + lo + kx - g.pad..][..hi - lo];
                        let srow = &src[oy * wo + lo..oy * wo + hi];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Weight gradient of [`conv_direct_acc`] for one image.
pub fn conv_direct_grad_weight<T: Scalar>(grad: &[T], img: &[T], gw: &mut [T], g: &ConvGeom, o: usize) {
    let (ho, wo, k, c) = (g.out_h(), g.out_w(), g.kernel, g.channels);
    for oc in 0..o {
        let gsrc = &grad[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..c {
            let src = &img[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = valid_cols(g, kx);
                    let mut s = T::zero();
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let xrow = &src[iy as usize * g.width + lo + kx - g.pad..][..hi - lo];
                        s += dot(&gsrc[oy * wo + lo..oy * wo + hi], xrow);
                    }
                    gw[((oc * c + ic) * k + ky) * k + kx] += s;
                }
            }
        }
    }
}
