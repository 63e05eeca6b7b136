//! Layer operations with explicit backward passes.
//!
//! Convolution here is cross-correlation (no kernel flip), the usual
//! deep-learning convention; the finite-difference oracle in [`gradcheck`]
//! assumes the same. Weights for the transposed convolution are laid out
//! `[C_in, C_out, kh, kw]`; its forward pass is exactly the backward-data
//! pass of the matching convolution.
//!
//! Reductions to scalars (loss means, normalization statistics, weight
//! gradients) accumulate in `f64`; elementwise activation math stays in the
//! ambient scalar type.

use super::tensor::Tensor;
use super::{shape_err, NeuralError, Scalar};

type Result<T> = std::result::Result<T, NeuralError>;

// ---------------------------------------------------------------------------
// Convolution core: the three contractions of (input, weight, output).
// ---------------------------------------------------------------------------

/// Output length along one spatial axis.
fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Valid output range [lo, hi) such that `o*stride + k_off - pad` stays
/// within [0, limit).
fn valid_out_range(out_len: usize, k_off: usize, stride: usize, pad: usize, limit: usize) -> (usize, usize) {
    let s = stride as i64;
    let shift = k_off as i64 - pad as i64;
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let hi = ((limit as i64 - 1 - shift) / s + 1).clamp(0, out_len as i64);
    ((lo as usize).min(out_len), (hi.max(0) as usize).min(out_len))
}

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_dims(
    x_shape: [usize; 4],
    w_shape: [usize; 4],
    stride: usize,
    pad: usize,
    ctx: &'static str,
) -> Result<ConvDims> {
    let [n, c_in, h, w] = x_shape;
    let [c_out, wc_in, kh, kw] = w_shape;
    if stride == 0 {
        return Err(shape_err(ctx, "stride >= 1", "stride 0".to_string()));
    }
    if wc_in != c_in {
        return Err(shape_err(
            ctx,
            format!("kernel input channels {c_in}"),
            format!("{wc_in}"),
        ));
    }
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(w, kw, stride, pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(shape_err(
            ctx,
            format!("spatial {h}x{w} at least as large as kernel {kh}x{kw} after padding {pad}"),
            "smaller input".to_string(),
        ));
    };
    Ok(ConvDims {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    })
}

/// y[n,co,oh,ow] = bias[co] + sum over ci,kh,kw of x * w.
fn conv_core_forward<F: Scalar>(x: &[F], w: &[F], bias: Option<&[F]>, d: &ConvDims) -> Vec<F> {
    let mut out = vec![F::zero(); d.n * d.c_out * d.oh * d.ow];
    let (oh_w, ow_w) = (d.oh, d.ow);
    for n in 0..d.n {
        for co in 0..d.c_out {
            let out_plane = &mut out[(n * d.c_out + co) * oh_w * ow_w..][..oh_w * ow_w];
            if let Some(b) = bias {
                out_plane.fill(b[co]);
            }
            for ci in 0..d.c_in {
                let x_plane = &x[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                for kh in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_out_range(d.oh, kh, d.stride, d.pad, d.h);
                    for kw in 0..d.kw {
                        let w_val = w[((co * d.c_in + ci) * d.kh + kh) * d.kw + kw];
                        if w_val == F::zero() {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_out_range(d.ow, kw, d.stride, d.pad, d.w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride + kh - d.pad;
                            let x_row = &x_plane[ih * d.w..][..d.w];
                            let out_row = &mut out_plane[oh * ow_w..][..ow_w];
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride + kw - d.pad;
                                out_row[ow] += w_val * x_row[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// gx[n,ci,ih,iw] += gy[n,co,oh,ow] * w[co,ci,kh,kw] (scatter form).
fn conv_core_backward_data<F: Scalar>(gy: &[F], w: &[F], d: &ConvDims) -> Vec<F> {
    let mut gx = vec![F::zero(); d.n * d.c_in * d.h * d.w];
    for n in 0..d.n {
        for co in 0..d.c_out {
            let gy_plane = &gy[(n * d.c_out + co) * d.oh * d.ow..][..d.oh * d.ow];
            for ci in 0..d.c_in {
                let gx_plane = &mut gx[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                for kh in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_out_range(d.oh, kh, d.stride, d.pad, d.h);
                    for kw in 0..d.kw {
                        let w_val = w[((co * d.c_in + ci) * d.kh + kh) * d.kw + kw];
                        if w_val == F::zero() {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_out_range(d.ow, kw, d.stride, d.pad, d.w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride + kh - d.pad;
                            let gx_row = &mut gx_plane[ih * d.w..][..d.w];
                            let gy_row = &gy_plane[oh * d.ow..][..d.ow];
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride + kw - d.pad;
                                gx_row[iw] += w_val * gy_row[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// gw[co,ci,kh,kw] = sum over n,oh,ow of x * gy. Row dot products run in the
/// ambient type; rows accumulate in f64.
fn conv_core_backward_weight<F: Scalar>(x: &[F], gy: &[F], d: &ConvDims) -> Vec<F> {
    let mut gw = vec![F::zero(); d.c_out * d.c_in * d.kh * d.kw];
    for co in 0..d.c_out {
        for ci in 0..d.c_in {
            for kh in 0..d.kh {
                let (oh_lo, oh_hi) = valid_out_range(d.oh, kh, d.stride, d.pad, d.h);
                for kw in 0..d.kw {
                    let (ow_lo, ow_hi) = valid_out_range(d.ow, kw, d.stride, d.pad, d.w);
                    let mut acc = 0.0f64;
                    for n in 0..d.n {
                        let x_plane = &x[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                        let gy_plane = &gy[(n * d.c_out + co) * d.oh * d.ow..][..d.oh * d.ow];
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride + kh - d.pad;
                            let x_row = &x_plane[ih * d.w..][..d.w];
                            let gy_row = &gy_plane[oh * d.ow..][..d.ow];
                            let mut row = F::zero();
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride + kw - d.pad;
                                row += x_row[iw] * gy_row[ow];
                            }
                            acc += row.wide();
                        }
                    }
                    gw[((co * d.c_in + ci) * d.kh + kh) * d.kw + kw] = F::of(acc);
                }
            }
        }
    }
    gw
}

// ---------------------------------------------------------------------------
// Public convolution ops.
// ---------------------------------------------------------------------------

/// Gradients of a convolution (or transposed convolution) with respect to
/// its input, weight, and bias.
pub struct ConvGrads<F: Scalar> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// 2-D convolution over NCHW input with `[C_out, C_in, kh, kw]` weights.
pub fn conv2d<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let d = conv_dims(x.dims4("conv2d")?, w.dims4("conv2d")?, stride, pad, "conv2d")?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(shape_err(
                "conv2d",
                format!("bias [{}]", d.c_out),
                format!("{:?}", b.shape()),
            ));
        }
    }
    let out = conv_core_forward(x.data(), w.data(), bias.map(|b| b.data()), &d);
    let y = Tensor::new(vec![d.n, d.c_out, d.oh, d.ow], out)?;
    y.debug_assert_finite("conv2d");
    Ok(y)
}

/// Backward pass of [`conv2d`]: gradients for input, weight, and bias.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<F>> {
    let d = conv_dims(
        x.dims4("conv2d_backward")?,
        w.dims4("conv2d_backward")?,
        stride,
        pad,
        "conv2d_backward",
    )?;
    let expected = [d.n, d.c_out, d.oh, d.ow];
    if gy.shape() != expected {
        return Err(shape_err(
            "conv2d_backward",
            format!("{expected:?}"),
            format!("{:?}", gy.shape()),
        ));
    }
    let gx = conv_core_backward_data(gy.data(), w.data(), &d);
    let gw = conv_core_backward_weight(x.data(), gy.data(), &d);
    let gb = channel_sums(gy.data(), d.n, d.c_out, d.oh * d.ow);
    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: Tensor::new(w.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![d.c_out], gb)?,
    })
}

/// Transposed 2-D convolution (fractionally-strided upsampling) with
/// `[C_in, C_out, kh, kw]` weights. Its forward pass is the backward-data
/// pass of the convolution that maps the output shape to the input shape.
pub fn conv2d_transpose<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let [n, c_in, h, w_in] = x.dims4("conv2d_transpose")?;
    let [wc_in, c_out, kh, kw] = w.dims4("conv2d_transpose")?;
    if wc_in != c_in {
        return Err(shape_err(
            "conv2d_transpose",
            format!("kernel input channels {c_in}"),
            format!("{wc_in}"),
        ));
    }
    if stride == 0 {
        return Err(shape_err("conv2d_transpose", "stride >= 1", "stride 0".to_string()));
    }
    let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
    let ow = ((w_in - 1) * stride + kw).checked_sub(2 * pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(shape_err(
            "conv2d_transpose",
            "padding smaller than the upsampled extent",
            format!("pad {pad}"),
        ));
    };
    if oh == 0 || ow == 0 {
        return Err(shape_err(
            "conv2d_transpose",
            "positive output size",
            format!("{oh}x{ow}"),
        ));
    }
    // The matching convolution runs output -> input.
    let d = ConvDims {
        n,
        c_in: c_out,
        h: oh,
        w: ow,
        c_out: c_in,
        kh,
        kw,
        oh: h,
        ow: w_in,
        stride,
        pad,
    };
    let mut out = conv_core_backward_data(x.data(), w.data(), &d);
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(shape_err(
                "conv2d_transpose",
                format!("bias [{c_out}]"),
                format!("{:?}", b.shape()),
            ));
        }
        let plane = oh * ow;
        for ni in 0..n {
            for co in 0..c_out {
                let row = &mut out[(ni * c_out + co) * plane..][..plane];
                let bv = b.data()[co];
                for v in row {
                    *v += bv;
                }
            }
        }
    }
    let y = Tensor::new(vec![n, c_out, oh, ow], out)?;
    y.debug_assert_finite("conv2d_transpose");
    Ok(y)
}

/// Backward pass of [`conv2d_transpose`].
pub fn conv2d_transpose_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<F>> {
    let [n, c_in, h, w_in] = x.dims4("conv2d_transpose_backward")?;
    let [_, c_out, kh, kw] = w.dims4("conv2d_transpose_backward")?;
    let [gn, gc, goh, gow] = gy.dims4("conv2d_transpose_backward")?;
    if gn != n || gc != c_out {
        return Err(shape_err(
            "conv2d_transpose_backward",
            format!("[{n}, {c_out}, ..]"),
            format!("{:?}", gy.shape()),
        ));
    }
    // In the matching convolution, gy plays the input and x the output.
    let d = ConvDims {
        n,
        c_in: c_out,
        h: goh,
        w: gow,
        c_out: c_in,
        kh,
        kw,
        oh: h,
        ow: w_in,
        stride,
        pad,
    };
    let gx = conv_core_forward(gy.data(), w.data(), None, &d);
    let gw = conv_core_backward_weight(gy.data(), x.data(), &d);
    let gb = channel_sums(gy.data(), n, c_out, goh * gow);
    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: Tensor::new(w.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}

fn channel_sums<F: Scalar>(data: &[F], n: usize, c: usize, plane: usize) -> Vec<F> {
    let mut sums = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let row = &data[(ni * c + ci) * plane..][..plane];
            let mut acc = 0.0f64;
            for v in row {
                acc += v.wide();
            }
            sums[ci] += acc;
        }
    }
    sums.into_iter().map(F::of).collect()
}

// ---------------------------------------------------------------------------
// Instance normalization.
// ---------------------------------------------------------------------------

/// Per-(sample, channel) statistics cached by the forward pass.
pub struct InstanceNormCache {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Per-(sample, channel) normalization to mean 0 / variance 1, then an
/// affine transform by `scale` and `shift` (both `[C]`).
pub fn instance_norm<F: Scalar>(
    x: &Tensor<F>,
    scale: &Tensor<F>,
    shift: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, InstanceNormCache)> {
    let [n, c, h, w] = x.dims4("instance_norm")?;
    let plane = h * w;
    if plane < 2 {
        return Err(NeuralError::DegenerateSpatial(plane));
    }
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(shape_err(
            "instance_norm",
            format!("scale/shift [{c}]"),
            format!("{:?}/{:?}", scale.shape(), shift.shape()),
        ));
    }
    let mut out = vec![F::zero(); x.len()];
    let mut mean = vec![0.0f64; n * c];
    let mut inv_std = vec![0.0f64; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let idx = ni * c + ci;
            let row = &x.data()[idx * plane..][..plane];
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for v in row {
                let v = v.wide();
                sum += v;
                sumsq += v * v;
            }
            let m = sum / plane as f64;
            let var = (sumsq / plane as f64 - m * m).max(0.0);
            let is = 1.0 / (var + eps).sqrt();
            mean[idx] = m;
            inv_std[idx] = is;
            let g = scale.data()[ci].wide();
            let b = shift.data()[ci].wide();
            let out_row = &mut out[idx * plane..][..plane];
            for (o, v) in out_row.iter_mut().zip(row.iter()) {
                *o = F::of((v.wide() - m) * is * g + b);
            }
        }
    }
    let y = Tensor::new(x.shape().to_vec(), out)?;
    y.debug_assert_finite("instance_norm");
    Ok((y, InstanceNormCache { mean, inv_std }))
}

/// Backward pass of [`instance_norm`]: gradients for input, scale, shift.
pub fn instance_norm_backward<F: Scalar>(
    x: &Tensor<F>,
    scale: &Tensor<F>,
    cache: &InstanceNormCache,
    gy: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let [n, c, h, w] = x.dims4("instance_norm_backward")?;
    if !gy.same_shape(x) {
        return Err(shape_err(
            "instance_norm_backward",
            format!("{:?}", x.shape()),
            format!("{:?}", gy.shape()),
        ));
    }
    let plane = h * w;
    let m = plane as f64;
    let mut gx = vec![F::zero(); x.len()];
    let mut gscale = vec![0.0f64; c];
    let mut gshift = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let idx = ni * c + ci;
            let mean = cache.mean[idx];
            let inv_std = cache.inv_std[idx];
            let g = scale.data()[ci].wide();
            let x_row = &x.data()[idx * plane..][..plane];
            let gy_row = &gy.data()[idx * plane..][..plane];
            let mut sum_gy = 0.0f64;
            let mut sum_gy_xhat = 0.0f64;
            for (xv, gv) in x_row.iter().zip(gy_row.iter()) {
                let xhat = (xv.wide() - mean) * inv_std;
                let gv = gv.wide();
                sum_gy += gv;
                sum_gy_xhat += gv * xhat;
            }
            gshift[ci] += sum_gy;
            gscale[ci] += sum_gy_xhat;
            let gx_row = &mut gx[idx * plane..][..plane];
            for ((out, xv), gv) in gx_row.iter_mut().zip(x_row.iter()).zip(gy_row.iter()) {
                let xhat = (xv.wide() - mean) * inv_std;
                let v = g * inv_std * (gv.wide() - sum_gy / m - xhat * sum_gy_xhat / m);
                *out = F::of(v);
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![c], gscale.into_iter().map(F::of).collect())?,
        Tensor::new(vec![c], gshift.into_iter().map(F::of).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let y = x.map(|v| if v > F::zero() { v } else { F::zero() });
    y.debug_assert_finite("relu");
    y
}

pub fn relu_backward<F: Scalar>(x: &Tensor<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
    zip_map(x, gy, "relu_backward", |xv, gv| {
        if xv > F::zero() {
            gv
        } else {
            F::zero()
        }
    })
}

pub fn leaky_relu<F: Scalar>(x: &Tensor<F>, alpha: F) -> Tensor<F> {
    let y = x.map(|v| if v > F::zero() { v } else { alpha * v });
    y.debug_assert_finite("leaky_relu");
    y
}

pub fn leaky_relu_backward<F: Scalar>(x: &Tensor<F>, alpha: F, gy: &Tensor<F>) -> Result<Tensor<F>> {
    zip_map(x, gy, "leaky_relu_backward", |xv, gv| {
        if xv > F::zero() {
            gv
        } else {
            alpha * gv
        }
    })
}

pub fn sigmoid<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let one = F::one();
    let y = x.map(|v| one / (one + (-v).exp()));
    y.debug_assert_finite("sigmoid");
    y
}

/// Backward from the sigmoid *output* y: gx = gy * y * (1 - y).
pub fn sigmoid_backward<F: Scalar>(y: &Tensor<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
    let one = F::one();
    zip_map(y, gy, "sigmoid_backward", move |yv, gv| gv * yv * (one - yv))
}

pub fn tanh<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let y = x.map(|v| v.tanh());
    y.debug_assert_finite("tanh");
    y
}

/// Backward from the tanh *output* y: gx = gy * (1 - y^2).
pub fn tanh_backward<F: Scalar>(y: &Tensor<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
    let one = F::one();
    zip_map(y, gy, "tanh_backward", move |yv, gv| gv * (one - yv * yv))
}

fn zip_map<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    ctx: &'static str,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    if !a.same_shape(b) {
        return Err(shape_err(
            ctx,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

// ---------------------------------------------------------------------------
// Losses (mean-reduced scalars with gradients).
// ---------------------------------------------------------------------------

/// Mean squared distance of every element from the constant `c`.
/// Returns the loss and dL/dt.
pub fn mse_to_constant<F: Scalar>(t: &Tensor<F>, c: F) -> (f64, Tensor<F>) {
    let n = t.len() as f64;
    let cw = c.wide();
    let mut acc = 0.0f64;
    for v in t.data() {
        let d = v.wide() - cw;
        acc += d * d;
    }
    let scale = F::of(2.0 / n);
    let grad = t.map(|v| (v - c) * scale);
    (acc / n, grad)
}

/// Mean absolute difference between two same-shaped tensors.
/// Returns the loss and the gradients (dL/da, dL/db); the sign convention at
/// exact ties is sign(0) = 0.
pub fn l1_diff<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(f64, Tensor<F>, Tensor<F>)> {
    if !a.same_shape(b) {
        return Err(shape_err(
            "l1_diff",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let n = a.len() as f64;
    let inv = F::of(1.0 / n);
    let mut acc = 0.0f64;
    let mut ga = Vec::with_capacity(a.len());
    for (&av, &bv) in a.data().iter().zip(b.data().iter()) {
        let d = av - bv;
        acc += d.wide().abs();
        let s = if d > F::zero() {
            inv
        } else if d < F::zero() {
            -inv
        } else {
            F::zero()
        };
        ga.push(s);
    }
    let ga = Tensor::new(a.shape().to_vec(), ga)?;
    let gb = ga.map(|v| -v);
    Ok((acc / n, ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;

    #[test]
    fn conv_of_ones_sums_the_window() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = SeedRng::new(2);
        let x = Tensor::<f32>::rand_uniform(&[2, 1, 4, 5], -1.0, 1.0, &mut rng);
        let mut w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_output_shape_formula_holds_on_a_sweep() {
        let mut rng = SeedRng::new(3);
        for _ in 0..60 {
            let h = 1 + rng.below(12);
            let w = 1 + rng.below(12);
            let k = 1 + rng.below(5);
            let stride = 1 + rng.below(3);
            let pad = rng.below(3);
            let x = Tensor::<f32>::zeros(&[1, 1, h, w]);
            let wt = Tensor::<f32>::zeros(&[1, 1, k, k]);
            match conv2d(&x, &wt, None, stride, pad) {
                Ok(y) => {
                    let eh = (h + 2 * pad - k) / stride + 1;
                    let ew = (w + 2 * pad - k) / stride + 1;
                    assert_eq!(y.shape(), &[1, 1, eh, ew]);
                }
                Err(_) => {
                    assert!(h + 2 * pad < k || w + 2 * pad < k || (h + 2 * pad - k) / stride + 1 == 0 || (w + 2 * pad - k) / stride + 1 == 0);
                }
            }
        }
    }

    #[test]
    fn transpose_shape_inverts_conv_shape() {
        let mut rng = SeedRng::new(4);
        for _ in 0..60 {
            let h = 2 + rng.below(12);
            let w = 2 + rng.below(12);
            let k = 1 + rng.below(5);
            let stride = 1 + rng.below(3);
            let pad = rng.below(k); // pad < k keeps the transpose well-formed
            let x = Tensor::<f32>::zeros(&[1, 2, h, w]);
            let cw = Tensor::<f32>::zeros(&[3, 2, k, k]);
            let Ok(y) = conv2d(&x, &cw, None, stride, pad) else {
                continue;
            };
            let tw = Tensor::<f32>::zeros(&[3, 2, k, k]);
            let back = conv2d_transpose(&y, &tw, None, stride, pad).unwrap();
            // The transpose recovers a shape the conv maps to y's shape:
            // heights may differ from h by stride remainder, as for any
            // strided conv inverse.
            let [_, c, bh, bw] = back.dims4("test").unwrap();
            assert_eq!(c, 2);
            let eh = (bh + 2 * pad - k) / stride + 1;
            let ew = (bw + 2 * pad - k) / stride + 1;
            assert_eq!([eh, ew], [y.shape()[2], y.shape()[3]]);
        }
    }

    #[test]
    fn stride_two_transpose_doubles_a_2x2_with_ones_kernel() {
        // Hand oracle: kernel 2x2 of ones, stride 2, no pad places each
        // input value into its own 2x2 output block.
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d_transpose(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let expected = vec![
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn transpose_of_zero_input_is_zero() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let mut rng = SeedRng::new(5);
        let w = Tensor::<f32>::randn(&[2, 3, 4, 4], 0.5, &mut rng);
        let y = conv2d_transpose(&x, &w, None, 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_of_constant_channel_is_the_shift() {
        let x = Tensor::<f32>::full(&[1, 2, 2, 3], 5.0);
        let scale = Tensor::<f32>::full(&[2], 3.0);
        let shift = Tensor::<f32>::new(vec![2], vec![0.25, -0.5]).unwrap();
        let (y, _) = instance_norm(&x, &scale, &shift, 1e-5).unwrap();
        for c in 0..2 {
            for i in 0..6 {
                assert_eq!(y.data()[c * 6 + i], shift.data()[c]);
            }
        }
    }

    #[test]
    fn instance_norm_standardizes_before_affine() {
        let mut rng = SeedRng::new(6);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, 5, 7], -2.0, 2.0, &mut rng);
        let scale = Tensor::<f64>::full(&[3], 1.0);
        let shift = Tensor::<f64>::zeros(&[3]);
        let (y, _) = instance_norm(&x, &scale, &shift, 1e-9).unwrap();
        let plane = 35;
        for idx in 0..6 {
            let row = &y.data()[idx * plane..][..plane];
            let mean: f64 = row.iter().sum::<f64>() / plane as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn instance_norm_rejects_degenerate_spatial() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let scale = Tensor::<f32>::full(&[1], 1.0);
        let shift = Tensor::<f32>::zeros(&[1]);
        assert!(matches!(
            instance_norm(&x, &scale, &shift, 1e-5),
            Err(NeuralError::DegenerateSpatial(1))
        ));
    }

    #[test]
    fn activation_point_values() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.2).data(), &[-0.2, 0.0, 2.0]);
        assert_eq!(sigmoid(&Tensor::<f32>::zeros(&[1])).data(), &[0.5]);
        assert_eq!(tanh(&Tensor::<f32>::zeros(&[1])).data(), &[0.0]);
    }

    #[test]
    fn loss_point_values() {
        let t = Tensor::<f32>::full(&[2], 1.0);
        let (mse, grad) = mse_to_constant(&t, 0.0);
        assert_eq!(mse, 1.0);
        assert_eq!(grad.data(), &[1.0, 1.0]); // 2*(1-0)/2

        let mut rng = SeedRng::new(7);
        let x = Tensor::<f32>::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let (l1, ga, gb) = l1_diff(&x, &x).unwrap();
        assert_eq!(l1, 0.0);
        assert!(ga.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatches_are_typed_errors() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(
            l1_diff(&a, &b),
            Err(NeuralError::ShapeMismatch { .. })
        ));
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, 1, 1),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }
}
