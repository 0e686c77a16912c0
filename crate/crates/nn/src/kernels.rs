//! Raw convolution kernels.
//!
//! Convolution is cross-correlation (no kernel flip). The three primitives
//! below cover both convolution directions: a transposed convolution's
//! forward pass is [`conv2d_backward_input`], and its input gradient is
//! [`conv2d_forward`] with the same weight.

use crate::{NnError, Result, Scalar, Tensor};

/// Output length of a strided, padded convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose_out_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    ((input - 1) * stride + kernel)
        .checked_sub(2 * pad)
        .filter(|&n| n > 0)
}

/// Range `[lo, hi)` of output positions whose tap `k` lands inside the input.
#[inline]
fn valid_range(
    k: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn conv_geom<T: Scalar>(
    x_shape: (usize, usize, usize, usize),
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Geom> {
    let (n, cin, h, w) = x_shape;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(NnError::Shape(format!(
            "conv weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if stride == 0 {
        return Err(NnError::InvalidParameter(
            "stride must be at least 1".into(),
        ));
    }
    let ho = conv_out_len(h, kh, stride, pad).ok_or_else(|| {
        NnError::Shape(format!(
            "kernel {kh} does not fit height {h} with padding {pad}"
        ))
    })?;
    let wo = conv_out_len(w, kw, stride, pad).ok_or_else(|| {
        NnError::Shape(format!(
            "kernel {kw} does not fit width {w} with padding {pad}"
        ))
    })?;
    Ok(Geom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
        stride,
        pad,
    })
}

/// Cross-correlation of `x [N,Cin,H,W]` with `weight [Cout,Cin,kh,kw]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x.dims4()?, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(NnError::Shape(format!(
                "bias has {} values for {} output channels",
                b.numel(),
                g.cout
            )));
        }
    }
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
    let xd = x.data();
    let wd = weight.data();
    let od = out.data_mut();
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut od[(n * g.cout + co) * out_plane..][..out_plane];
            if let Some(b) = bias {
                o.fill(b.data()[co]);
            }
            for ci in 0..g.cin {
                let xi = &xd[(n * g.cin + ci) * in_plane..][..in_plane];
                let wk = &wd[(co * g.cin + ci) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let (y0, y1) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.kw {
                        let (x0, x1) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wk[ky * g.kw + kx];
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let orow = &mut o[oy * g.wo + x0..oy * g.wo + x1];
                            if g.stride == 1 {
                                let ix0 = x0 + kx - g.pad;
                                let irow = &xi[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                                for (ov, &iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            } else {
                                let base = iy * g.w + kx;
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    let ix = base + (x0 + j) * g.stride - g.pad;
                                    *ov += wv * xi[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d_forward`] with respect to its input.
///
/// `in_hw` fixes the spatial size of the result, which a strided
/// convolution cannot recover from the output alone.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    in_hw: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, gcout, gho, gwo) = grad_out.dims4()?;
    let (cout, cin, _, _) = weight.dims4()?;
    if gcout != cout {
        return Err(NnError::Shape(format!(
            "gradient has {gcout} channels, weight produces {cout}"
        )));
    }
    let g = conv_geom((n, cin, in_hw.0, in_hw.1), weight, stride, pad)?;
    if g.ho != gho || g.wo != gwo {
        return Err(NnError::Shape(format!(
            "output gradient {gho}x{gwo} does not match input {}x{}",
            in_hw.0, in_hw.1
        )));
    }
    let mut gx = Tensor::zeros(&[g.n, g.cin, g.h, g.w]);
    let gyd = grad_out.data();
    let wd = weight.data();
    let gxd = gx.data_mut();
    let in_plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    for n in 0..g.n {
        for co in 0..g.cout {
            let gy = &gyd[(n * g.cout + co) * out_plane..][..out_plane];
            for ci in 0..g.cin {
                let gxi = &mut gxd[(n * g.cin + ci) * in_plane..][..in_plane];
                let wk = &wd[(co * g.cin + ci) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let (y0, y1) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.kw {
                        let (x0, x1) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wk[ky * g.kw + kx];
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let grow = &gy[oy * g.wo + x0..oy * g.wo + x1];
                            if g.stride == 1 {
                                let ix0 = x0 + kx - g.pad;
                                let irow = &mut gxi[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                                for (iv, &gv) in irow.iter_mut().zip(grow) {
                                    *iv += wv * gv;
                                }
                            } else {
                                let base = iy * g.w + kx;
                                for (j, &gv) in grow.iter().enumerate() {
                                    let ix = base + (x0 + j) * g.stride - g.pad;
                                    gxi[ix] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Gradient of [`conv2d_forward`] with respect to its weight.
pub fn conv2d_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    kernel_hw: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = x.dims4()?;
    let (gn, cout, gho, gwo) = grad_out.dims4()?;
    if gn != n {
        return Err(NnError::Shape(format!("batch mismatch {n} vs {gn}")));
    }
    let (kh, kw) = kernel_hw;
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    if ho != Some(gho) || wo != Some(gwo) {
        return Err(NnError::Shape(format!(
            "output gradient {gho}x{gwo} inconsistent with input {h}x{w}"
        )));
    }
    let mut gw = Tensor::zeros(&[cout, cin, kh, kw]);
    let xd = x.data();
    let gyd = grad_out.data();
    let gwd = gw.data_mut();
    let in_plane = h * w;
    let out_plane = gho * gwo;
    for b in 0..n {
        for co in 0..cout {
            let gy = &gyd[(b * cout + co) * out_plane..][..out_plane];
            for ci in 0..cin {
                let xi = &xd[(b * cin + ci) * in_plane..][..in_plane];
                let gk = &mut gwd[(co * cin + ci) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (y0, y1) = valid_range(ky, pad, stride, h, gho);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(kx, pad, stride, w, gwo);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy * stride + ky - pad;
                            let grow = &gy[oy * gwo + x0..oy * gwo + x1];
                            if stride == 1 {
                                let ix0 = x0 + kx - pad;
                                let irow = &xi[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                acc += grow.iter().zip(irow).map(|(&a, &b)| a * b).sum::<T>();
                            } else {
                                let base = iy * w + kx;
                                for (j, &gv) in grow.iter().enumerate() {
                                    acc += gv * xi[base + (x0 + j) * stride - pad];
                                }
                            }
                        }
                        gk[ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(gw)
}

/// Per-channel sum over batch and spatial axes (the bias gradient).
pub fn channel_sum<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[c]);
    for b in 0..n {
        for ch in 0..c {
            let s: T = t.data()[(b * c + ch) * plane..][..plane]
                .iter()
                .copied()
                .sum();
            out.data_mut()[ch] += s;
        }
    }
    Ok(out)
}

/// Transposed convolution with PyTorch weight layout `[Cin, Cout, kh, kw]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (_, cin, h, w) = x.dims4()?;
    let (wcin, cout, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(NnError::Shape(format!(
            "transposed conv weight expects {wcin} input channels, input has {cin}"
        )));
    }
    let ho = conv_transpose_out_len(h, kh, stride, pad).ok_or_else(|| {
        NnError::Shape(format!("invalid transposed conv geometry for height {h}"))
    })?;
    let wo = conv_transpose_out_len(w, kw, stride, pad)
        .ok_or_else(|| NnError::Shape(format!("invalid transposed conv geometry for width {w}")))?;
    let mut out = conv2d_backward_input(x, weight, (ho, wo), stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(NnError::Shape(format!(
                "bias has {} values for {cout} output channels",
                b.numel()
            )));
        }
        let plane = ho * wo;
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b.data()[i % cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

/// Saved statistics of a group-normalization forward pass.
#[derive(Debug, Clone)]
pub struct GroupNormStats<T> {
    /// Normalized input before the affine transform.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per (sample, group).
    pub inv_std: Vec<T>,
    /// Mean per (sample, group).
    pub mean: Vec<T>,
}

pub fn group_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, GroupNormStats<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(NnError::Shape(format!(
            "{c} channels not divisible into {groups} groups"
        )));
    }
    if gamma.numel() != c || beta.numel() != c {
        return Err(NnError::Shape(format!(
            "affine parameters must have {c} values"
        )));
    }
    let cpg = c / groups;
    let span = cpg * h * w;
    let plane = h * w;
    let m = T::of(span as f64);
    let eps = T::of(eps);
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * groups);
    let mut means = Vec::with_capacity(n * groups);
    for b in 0..n {
        for g in 0..groups {
            let off = (b * c + g * cpg) * plane;
            let xs = &x.data()[off..off + span];
            let mean = xs.iter().copied().sum::<T>() / m;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            means.push(mean);
            let xh = &mut xhat.data_mut()[off..off + span];
            for (o, &v) in xh.iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
            for k in 0..cpg {
                let ch = g * cpg + k;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                let src = &xhat.data()[off + k * plane..off + (k + 1) * plane];
                let dst = &mut y.data_mut()[off + k * plane..off + (k + 1) * plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = ga * v + be;
                }
            }
        }
    }
    Ok((
        y,
        GroupNormStats {
            xhat,
            inv_std,
            mean: means,
        },
    ))
}
