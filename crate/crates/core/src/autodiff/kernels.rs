//! Raw buffer kernels behind the differentiable ops.
//!
//! Every buffer is row-major. Channel-by-time activations are `[C x T]`,
//! convolution kernels are `[C_out x C_in x K]`, and transposed-convolution
//! kernels are `[C_in x C_out x K]`. Kernels accumulate into their output.

/// `C += A * B` with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_off: usize,
    (rsa, csa): (usize, usize),
    b: &[f64],
    b_off: usize,
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    c_off: usize,
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Bounds of the last touched element in each operand.
    assert!(a_off + (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(b_off + (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c_off + (m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every accessed element inside its slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(a_off),
            rsa as isize,
            csa as isize,
            b.as_ptr().add(b_off),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry shared by the causal convolution kernels.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t: usize,
}

/// `out[o, t] += sum_{i,k} w[o, i, k] * x[i, t - (K-1-k) * dilation]`,
/// with `x` taken as zero before time 0.
pub fn causal_conv_forward(d: ConvDims, dilation: usize, x: &[f64], w: &[f64], out: &mut [f64]) {
    for tap in 0..d.k {
        let shift = (d.k - 1 - tap) * dilation;
        if shift >= d.t {
            continue;
        }
        gemm(
            d.c_out,
            d.c_in,
            d.t - shift,
            w,
            tap,
            (d.c_in * d.k, d.k),
            x,
            0,
            (d.t, 1),
            out,
            shift,
            (d.t, 1),
        );
    }
}

pub fn causal_conv_backward(
    d: ConvDims,
    dilation: usize,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for tap in 0..d.k {
            let shift = (d.k - 1 - tap) * dilation;
            if shift >= d.t {
                continue;
            }
            gemm(
                d.c_in,
                d.c_out,
                d.t - shift,
                w,
                tap,
                (d.k, d.c_in * d.k),
                dout,
                shift,
                (d.t, 1),
                dx,
                0,
                (d.t, 1),
            );
        }
    }
    if let Some(dw) = dw {
        for tap in 0..d.k {
            let shift = (d.k - 1 - tap) * dilation;
            if shift >= d.t {
                continue;
            }
            gemm(
                d.c_out,
                d.t - shift,
                d.c_in,
                dout,
                shift,
                (d.t, 1),
                x,
                0,
                (1, d.t),
                dw,
                tap,
                (d.c_in * d.k, d.k),
            );
        }
    }
}

/// Output length of a valid strided convolution, `None` when the input is
/// shorter than the kernel.
pub fn strided_len(t: usize, k: usize, stride: usize) -> Option<usize> {
    (t >= k).then(|| (t - k) / stride + 1)
}

/// `out[o, j] += sum_{i,k} w[o, i, k] * x[i, j * stride + k]` (no padding).
pub fn strided_conv_forward(d: ConvDims, stride: usize, x: &[f64], w: &[f64], out: &mut [f64]) {
    let Some(len) = strided_len(d.t, d.k, stride) else {
        return;
    };
    for tap in 0..d.k {
        gemm(
            d.c_out,
            d.c_in,
            len,
            w,
            tap,
            (d.c_in * d.k, d.k),
            x,
            tap,
            (d.t, stride),
            out,
            0,
            (len, 1),
        );
    }
}

pub fn strided_conv_backward(
    d: ConvDims,
    stride: usize,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let Some(len) = strided_len(d.t, d.k, stride) else {
        return;
    };
    if let Some(dx) = dx {
        for tap in 0..d.k {
            gemm(
                d.c_in,
                d.c_out,
                len,
                w,
                tap,
                (d.k, d.c_in * d.k),
                dout,
                0,
                (len, 1),
                dx,
                tap,
                (d.t, stride),
            );
        }
    }
    if let Some(dw) = dw {
        for tap in 0..d.k {
            gemm(
                d.c_out,
                len,
                d.c_in,
                dout,
                0,
                (len, 1),
                x,
                tap,
                (stride, d.t),
                dw,
                tap,
                (d.c_in * d.k, d.k),
            );
        }
    }
}

/// Left crop applied to the full transposed-convolution output so that the
/// result has exactly `frames * stride` samples.
pub fn transposed_pad(k: usize, stride: usize) -> usize {
    k.saturating_sub(stride) / 2
}

/// Range of input frames `f` whose tap `tap` lands inside `[0, frames*stride)`.
fn transposed_frames(frames: usize, stride: usize, k: usize, tap: usize) -> (usize, usize) {
    let pad = transposed_pad(k, stride);
    let total = frames * stride;
    // position = f * stride + tap - pad must lie in [0, total)
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let hi = if tap >= pad {
        // f * stride < total - (tap - pad)
        let lim = total.saturating_sub(tap - pad);
        lim.div_ceil(stride).min(frames)
    } else {
        frames
    };
    (lo, hi.max(lo))
}

/// `y[o, f*stride + tap - pad] += sum_i w[i, o, tap] * x[i, f]`.
/// `d.t` is the number of input frames; `y` has `frames * stride` columns.
pub fn transposed_conv_forward(d: ConvDims, stride: usize, x: &[f64], w: &[f64], y: &mut [f64]) {
    let frames = d.t;
    let total = frames * stride;
    let pad = transposed_pad(d.k, stride);
    for tap in 0..d.k {
        let (lo, hi) = transposed_frames(frames, stride, d.k, tap);
        if hi <= lo {
            continue;
        }
        gemm(
            d.c_out,
            d.c_in,
            hi - lo,
            w,
            tap,
            (d.k, d.c_out * d.k),
            x,
            lo,
            (frames, 1),
            y,
            lo * stride + tap - pad,
            (total, stride),
        );
    }
}

pub fn transposed_conv_backward(
    d: ConvDims,
    stride: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let frames = d.t;
    let total = frames * stride;
    let pad = transposed_pad(d.k, stride);
    if let Some(dx) = dx {
        for tap in 0..d.k {
            let (lo, hi) = transposed_frames(frames, stride, d.k, tap);
            if hi <= lo {
                continue;
            }
            // dx[i, f] += sum_o w[i, o, tap] * dy[o, pos(f)]
            gemm(
                d.c_in,
                d.c_out,
                hi - lo,
                w,
                tap,
                (d.c_out * d.k, d.k),
                dy,
                lo * stride + tap - pad,
                (total, stride),
                dx,
                lo,
                (frames, 1),
            );
        }
    }
    if let Some(dw) = dw {
        for tap in 0..d.k {
            let (lo, hi) = transposed_frames(frames, stride, d.k, tap);
            if hi <= lo {
                continue;
            }
            // dw[i, o, tap] += sum_f x[i, f] * dy[o, pos(f)]
            gemm(
                d.c_in,
                hi - lo,
                d.c_out,
                x,
                lo,
                (frames, 1),
                dy,
                lo * stride + tap - pad,
                (stride, total),
                dw,
                tap,
                (d.c_out * d.k, d.k),
            );
        }
    }
}

/// `y += W v` for `W` of shape `[rows x cols]`.
pub fn matvec(rows: usize, cols: usize, w: &[f64], v: &[f64], y: &mut [f64]) {
    for (r, out) in y.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *out += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}
