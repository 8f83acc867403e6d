//! Raw numeric kernels on flat row-major buffers. Shapes are validated by the
//! callers in `tape.rs`; these functions only index.

/// Batched `op(a) · op(b)` where `op` optionally transposes the trailing two
/// dimensions. `a` holds `batch` matrices of logical shape `m x k`, `b` holds
/// `batch` matrices of logical shape `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let a_mat = &a[bi * m * k..(bi + 1) * m * k];
        let b_mat = &b[bi * k * n..(bi + 1) * k * n];
        let o = &mut out[bi * m * n..(bi + 1) * m * n];
        let a_owned;
        let a_rows: &[f64] = if trans_a {
            a_owned = transpose(a_mat, k, m);
            &a_owned
        } else {
            a_mat
        };
        // b stored as n x k is transposed so the inner loop is a contiguous
        // axpy over an output row.
        let b_owned;
        let b_rows: &[f64] = if trans_b {
            b_owned = transpose(b_mat, n, k);
            &b_owned
        } else {
            b_mat
        };
        for i in 0..m {
            let orow = &mut o[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a_rows[i * k + p];
                let br = &b_rows[p * n..(p + 1) * n];
                for (ov, bv) in orow.iter_mut().zip(br) {
                    *ov += av * bv;
                }
            }
        }
    }
    out
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Output positions `t` in `0..len_out` for which `t*stride + tap - padding`
/// lands inside `0..len_in`.
#[inline]
fn valid_range(
    tap: usize,
    stride: usize,
    padding: usize,
    len_in: usize,
    len_out: usize,
) -> std::ops::Range<usize> {
    // need t*stride + tap >= padding and t*stride + tap - padding < len_in
    let lo = if tap >= padding {
        0
    } else {
        (padding - tap).div_ceil(stride)
    };
    let limit = len_in + padding; // t*stride + tap < limit
    let hi = if tap >= limit {
        0
    } else {
        ((limit - tap - 1) / stride + 1).min(len_out)
    };
    lo..hi.max(lo)
}

/// Unrolls one sample `[c x len_in]` into columns `[c*k x len_out]` so that
/// a convolution becomes a matrix product. Out-of-range taps stay zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    len_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
    len_out: usize,
    cols: &mut [f64],
) {
    cols.fill(0.0);
    for ci in 0..c {
        let xr = &x[ci * len_in..(ci + 1) * len_in];
        for tap in 0..k {
            let row = &mut cols[(ci * k + tap) * len_out..(ci * k + tap + 1) * len_out];
            let r = valid_range(tap, stride, padding, len_in, len_out);
            if r.is_empty() {
                continue;
            }
            let xs = xr[r.start * stride + tap - padding..]
                .iter()
                .step_by(stride);
            for (dst, xv) in row[r].iter_mut().zip(xs) {
                *dst = *xv;
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds each column entry back onto its input position.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    c: usize,
    len_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
    len_out: usize,
    y: &mut [f64],
) {
    for ci in 0..c {
        let yr = &mut y[ci * len_in..(ci + 1) * len_in];
        for tap in 0..k {
            let row = &cols[(ci * k + tap) * len_out..(ci * k + tap + 1) * len_out];
            let r = valid_range(tap, stride, padding, len_in, len_out);
            if r.is_empty() {
                continue;
            }
            let ys = yr[r.start * stride + tap - padding..]
                .iter_mut()
                .step_by(stride);
            for (yv, cv) in ys.zip(&row[r]) {
                *yv += cv;
            }
        }
    }
}

/// Cross-correlation. `x`: `[batch x c_in x len_in]`, `w`: `[c_out x c_in x k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d(
    x: &[f64],
    w: &[f64],
    batch: usize,
    c_in: usize,
    len_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    len_out: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * c_out * len_out);
    let mut cols = vec![0.0; c_in * k * len_out];
    for b in 0..batch {
        im2col(
            &x[b * c_in * len_in..(b + 1) * c_in * len_in],
            c_in,
            len_in,
            k,
            stride,
            padding,
            len_out,
            &mut cols,
        );
        out.extend(matmul(w, &cols, 1, c_out, c_in * k, len_out, false, false));
    }
    out
}

/// Adjoint of [`conv1d`]. `x`: `[batch x c_x x len_x]`, `w`: `[c_x x c_y x k]`,
/// result `[batch x c_y x len_y]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_transpose(
    x: &[f64],
    w: &[f64],
    batch: usize,
    c_x: usize,
    len_x: usize,
    c_y: usize,
    k: usize,
    stride: usize,
    padding: usize,
    len_y: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * c_y * len_y];
    for b in 0..batch {
        let xb = &x[b * c_x * len_x..(b + 1) * c_x * len_x];
        // w viewed as [c_x x c_y*k]; cols = w^T x is [c_y*k x len_x].
        let cols = matmul(w, xb, 1, c_y * k, c_x, len_x, true, false);
        col2im_add(
            &cols,
            c_y,
            len_y,
            k,
            stride,
            padding,
            len_x,
            &mut out[b * c_y * len_y..(b + 1) * c_y * len_y],
        );
    }
    out
}

/// Kernel gradient of [`conv1d`]: `input` `[batch x c_in x len_in]`, `gout`
/// `[batch x c_out x len_out]`, result `[c_out x c_in x k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_weight_grad(
    input: &[f64],
    gout: &[f64],
    batch: usize,
    c_in: usize,
    len_in: usize,
    c_out: usize,
    len_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * c_in * k];
    let mut cols = vec![0.0; c_in * k * len_out];
    for b in 0..batch {
        im2col(
            &input[b * c_in * len_in..(b + 1) * c_in * len_in],
            c_in,
            len_in,
            k,
            stride,
            padding,
            len_out,
            &mut cols,
        );
        let g = &gout[b * c_out * len_out..(b + 1) * c_out * len_out];
        let part = matmul(g, &cols, 1, c_out, len_out, c_in * k, false, true);
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    out
}
