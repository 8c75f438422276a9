//! Slice-level forward/backward loops shared by the tape.
//!
//! Layouts are row-major: feature maps are `[C, H, W]`, convolution weights
//! `[C_out, C_in, kH, kW]`, dense weights `[out, in]`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extent along one axis, `None` if the kernel does not fit.
    pub fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = n + 2 * pad;
        if padded < k || stride == 0 {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    /// Range of output indices `o` for which `o*stride + k - pad` is inside `[0, n)`.
    #[inline]
    fn valid(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        let (k, s, p, n) = (k as i64, stride as i64, pad as i64, n as i64);
        // smallest o with o*s + k - p >= 0
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        // largest o with o*s + k - p <= n - 1
        let top = n - 1 + p - k;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top / s + 1).min(out as i64);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Unfolds `[C_in,H,W]` into a `[C_in·kH·kW, oH·oW]` patch matrix; padded
/// taps stay zero.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut col = vec![0.0; g.cin * g.kh * g.kw * plane];
    for ci in 0..g.cin {
        let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = ConvGeom::valid(g.oh, g.h, ky, g.stride, g.pad);
            for kx in 0..g.kw {
                let (ox0, ox1) = ConvGeom::valid(g.ow, g.w, kx, g.stride, g.pad);
                let r = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[r * plane..(r + 1) * plane];
                for oy in oy0..oy1 {
                    let row_in = &x_c[(oy * g.stride + ky - g.pad) * g.w..];
                    let row_out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox0..ox1 {
                        row_out[ox] = row_in[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im_add(dcol: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.cin {
        let dx_c = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = ConvGeom::valid(g.oh, g.h, ky, g.stride, g.pad);
            for kx in 0..g.kw {
                let (ox0, ox1) = ConvGeom::valid(g.ow, g.w, kx, g.stride, g.pad);
                let r = (ci * g.kh + ky) * g.kw + kx;
                let src = &dcol[r * plane..(r + 1) * plane];
                for oy in oy0..oy1 {
                    let base = (oy * g.stride + ky - g.pad) * g.w;
                    let row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox0..ox1 {
                        dx_c[base + ox * g.stride + kx - g.pad] += row[ox];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Inner product with eight interleaved partial sums combined in a fixed
/// order, so the result is reproducible and the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Output positions processed together so partial sums stay in L1.
const BLOCK: usize = 128;

/// Returns the output map and the patch matrix (kept for the backward pass).
pub(crate) fn conv2d_forward(x: &[f64], wt: &[f64], bias: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let plane = g.oh * g.ow;
    let k = g.cin * g.kh * g.kw;
    let col = im2col(x, g);
    let mut out = vec![0.0; g.cout * plane];
    for start in (0..plane).step_by(BLOCK) {
        let end = (start + BLOCK).min(plane);
        for co in 0..g.cout {
            let out_c = &mut out[co * plane + start..co * plane + end];
            out_c.iter_mut().for_each(|v| *v = bias[co]);
            for r in 0..k {
                axpy(out_c, wt[co * k + r], &col[r * plane + start..r * plane + end]);
            }
        }
    }
    (out, col)
}

/// Accumulates input, weight and bias gradients of a convolution from the
/// forward patch matrix. `dx` is skipped when `None`.
pub(crate) fn conv2d_backward(
    col: &[f64],
    wt: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let plane = g.oh * g.ow;
    let k = g.cin * g.kh * g.kw;
    if let Some(db) = db {
        for co in 0..g.cout {
            db[co] += dout[co * plane..(co + 1) * plane].iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        for co in 0..g.cout {
            let d_c = &dout[co * plane..(co + 1) * plane];
            for r in 0..k {
                dw[co * k + r] += dot(d_c, &col[r * plane..(r + 1) * plane]);
            }
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; k * plane];
        for start in (0..plane).step_by(BLOCK) {
            let end = (start + BLOCK).min(plane);
            for r in 0..k {
                let dst = &mut dcol[r * plane + start..r * plane + end];
                for co in 0..g.cout {
                    axpy(dst, wt[co * k + r], &dout[co * plane + start..co * plane + end]);
                }
            }
        }
        col2im_add(&dcol, g, dx);
    }
}

pub(crate) fn linear_forward(x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(i, &b)| {
            let row = &wt[i * n..(i + 1) * n];
            b + dot(row, x)
        })
        .collect()
}

pub(crate) fn linear_backward(
    x: &[f64],
    wt: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let n = x.len();
    if let Some(db) = db {
        db.iter_mut().zip(dout).for_each(|(a, d)| *a += d);
    }
    if let Some(dw) = dw {
        for (i, &d) in dout.iter().enumerate() {
            let row = &mut dw[i * n..(i + 1) * n];
            row.iter_mut().zip(x).for_each(|(a, xv)| *a += d * xv);
        }
    }
    if let Some(dx) = dx {
        for (i, &d) in dout.iter().enumerate() {
            let row = &wt[i * n..(i + 1) * n];
            dx.iter_mut().zip(row).for_each(|(a, wv)| *a += d * wv);
        }
    }
}

/// Returns pooled values and, per output, the flat input index of the
/// winning element (first maximum in row-major window order).
pub(crate) fn maxpool_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / kh, w / kw);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let i = (ch * h + oy * kh + dy) * w + ox * kw + dx;
                        if best_i == usize::MAX || x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// `dx += y ⊙ (dy − ⟨dy, y⟩)` for one softmax row.
pub(crate) fn softmax_backward_into(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d += yi * (gi - dot);
    }
}

/// `C[m,n] = A[m,k] · B[k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
    c
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}
