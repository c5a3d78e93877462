//! 2-d cross-correlation (no kernel flip) and its adjoints.
//!
//! Layouts: inputs `[C, H, W]`, kernels `[G, C, k, k]`, outputs `[G, Ho, Wo]`.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::error::config_err;
use crate::Result;

/// Output extent of a valid convolution, or `None` if the kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

fn dims3<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(config_err!("{what} must be 3-d, got {:?}", t.shape())),
    }
}

fn kernel_dims<T: Real>(k: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *k.shape() {
        [g, c, kh, kw] if kh == kw => Ok((g, c, kh)),
        _ => Err(config_err!("kernels must be [G, C, k, k], got {:?}", k.shape())),
    }
}

/// Strided valid cross-correlation plus per-group bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (c_in, h, w) = dims3(input, "input")?;
    let (groups, c_k, k) = kernel_dims(kernels)?;
    if c_in != c_k {
        return Err(config_err!("input has {c_in} channels, kernels expect {c_k}"));
    }
    if let Some(b) = bias {
        if b.len() != groups {
            return Err(config_err!("bias has {} entries for {groups} groups", b.len()));
        }
    }
    let (ho, wo) = match (conv_output_extent(h, k, stride), conv_output_extent(w, k, stride)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => return Err(config_err!("kernel {k} with stride {stride} does not fit {h}x{w}")),
    };

    let x = input.data();
    let kd = kernels.data();
    let mut out = Vec::with_capacity(groups * ho * wo);
    let mut acc = vec![0f64; ho * wo];
    for g in 0..groups {
        let b0 = bias.map_or(0.0, |b| b[g].as_f64());
        acc.iter_mut().for_each(|a| *a = b0);
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let wgt = kd[((g * c_in + c) * k + a) * k + b].as_f64();
                    for y in 0..ho {
                        let row = &plane[(y * stride + a) * w + b..];
                        let dst = &mut acc[y * wo..(y + 1) * wo];
                        if stride == 1 {
                            for (d, &v) in dst.iter_mut().zip(&row[..wo]) {
                                *d += wgt * v.as_f64();
                            }
                        } else {
                            for (xo, d) in dst.iter_mut().enumerate() {
                                *d += wgt * row[xo * stride].as_f64();
                            }
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    let out = Tensor::from_vec(&[groups, ho, wo], out)?;
    out.ensure_finite("conv2d output")?;
    Ok(out)
}

/// Stride-1 valid cross-correlation: `[C,H,W] * [G,C,k,k] -> [G,H-k+1,W-k+1]`.
pub fn conv2d_valid<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    conv2d(input, kernels, Some(bias), 1)
}

/// Adjoint of [`conv2d_valid`] in its input: `[G,h,w] -> [C,h+k-1,w+k-1]`.
///
/// For matching shapes, `<conv2d_valid(x, K), y> == <x, conv2d_full(y, K)>`.
pub fn conv2d_full<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let (g, h, w) = dims3(input, "input")?;
    let (groups, c, k) = kernel_dims(kernels)?;
    if g != groups {
        return Err(config_err!("input has {g} groups, kernels have {groups}"));
    }
    conv2d_input_grad(input, kernels, (c, h + k - 1, w + k - 1), 1)
}

/// Gradient of a strided [`conv2d`] with respect to its input.
pub fn conv2d_input_grad<T: Real>(
    grad_out: &Tensor<T>,
    kernels: &Tensor<T>,
    input_shape: (usize, usize, usize),
    stride: usize,
) -> Result<Tensor<T>> {
    let (groups, ho, wo) = dims3(grad_out, "output gradient")?;
    let (gk, c_in, k) = kernel_dims(kernels)?;
    let (c, h, w) = input_shape;
    if gk != groups || c != c_in {
        return Err(config_err!(
            "kernels {:?} do not match gradient {:?} / input channels {c}",
            kernels.shape(),
            grad_out.shape()
        ));
    }
    if conv_output_extent(h, k, stride) != Some(ho) || conv_output_extent(w, k, stride) != Some(wo) {
        return Err(config_err!("input {h}x{w} inconsistent with output {ho}x{wo}"));
    }
    let gy = grad_out.data();
    let kd = kernels.data();
    let mut acc = vec![0f64; c * h * w];
    for g in 0..groups {
        let gplane = &gy[g * ho * wo..(g + 1) * ho * wo];
        for ci in 0..c {
            let dst_plane = &mut acc[ci * h * w..(ci + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let wgt = kd[((g * c + ci) * k + a) * k + b].as_f64();
                    for y in 0..ho {
                        let src = &gplane[y * wo..(y + 1) * wo];
                        let dst = &mut dst_plane[(y * stride + a) * w + b..];
                        if stride == 1 {
                            for (d, &v) in dst[..wo].iter_mut().zip(src) {
                                *d += wgt * v.as_f64();
                            }
                        } else {
                            for (xo, &v) in src.iter().enumerate() {
                                dst[xo * stride] += wgt * v.as_f64();
                            }
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(&[c, h, w], acc.into_iter().map(T::from_f64).collect())?;
    out.ensure_finite("conv2d input gradient")?;
    Ok(out)
}

/// Gradient of a strided [`conv2d`] with respect to kernels and bias.
///
/// `kernel[g,c,a,b] = sum_{y,x} grad_out[g,y,x] * input[c, y*s+a, x*s+b]`.
pub fn conv2d_kernel_grad<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (c, h, w) = dims3(input, "input")?;
    let (groups, ho, wo) = dims3(grad_out, "output gradient")?;
    if conv_output_extent(h, kernel, stride) != Some(ho) || conv_output_extent(w, kernel, stride) != Some(wo) {
        return Err(config_err!("input {h}x{w} inconsistent with output {ho}x{wo}"));
    }
    let x = input.data();
    let gy = grad_out.data();
    let mut gk = Vec::with_capacity(groups * c * kernel * kernel);
    let mut gb = Vec::with_capacity(groups);
    for g in 0..groups {
        let gplane = &gy[g * ho * wo..(g + 1) * ho * wo];
        gb.push(T::from_f64(gplane.iter().fold(0.0, |s, &v| s + v.as_f64())));
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for a in 0..kernel {
                for b in 0..kernel {
                    let mut s = 0f64;
                    for y in 0..ho {
                        let src = &gplane[y * wo..(y + 1) * wo];
                        let row = &plane[(y * stride + a) * w + b..];
                        if stride == 1 {
                            for (&gv, &xv) in src.iter().zip(&row[..wo]) {
                                s += gv.as_f64() * xv.as_f64();
                            }
                        } else {
                            for (xo, &gv) in src.iter().enumerate() {
                                s += gv.as_f64() * row[xo * stride].as_f64();
                            }
                        }
                    }
                    gk.push(T::from_f64(s));
                }
            }
        }
    }
    let gk = Tensor::from_vec(&[groups, c, kernel, kernel], gk)?;
    gk.ensure_finite("conv2d kernel gradient")?;
    Ok((gk, gb))
}

/// All gradients of a strided [`conv2d`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<ConvGrads<T>> {
    let (c, h, w) = dims3(input, "input")?;
    let k = kernels.shape().get(2).copied().unwrap_or(0);
    let (gk, gb) = conv2d_kernel_grad(input, grad_out, k, stride)?;
    let gi = conv2d_input_grad(grad_out, kernels, (c, h, w), stride)?;
    Ok(ConvGrads {
        input: gi,
        kernels: gk,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomStream;

    fn random(shape: &[usize], s: &mut RandomStream) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| s.uniform(-1.0, 1.0))
    }

    /// Direct window summation, independent of the row-axpy loop order above.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], stride: usize) -> Tensor<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (g, kk) = (k.shape()[0], k.shape()[2]);
        let ho = (h - kk) / stride + 1;
        let wo = (w - kk) / stride + 1;
        let mut out = Tensor::zeros(&[g, ho, wo]);
        for gi in 0..g {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut s = bias[gi];
                    for ci in 0..c {
                        for a in 0..kk {
                            for b in 0..kk {
                                s += x.data()[x.idx3(ci, y * stride + a, xo * stride + b)]
                                    * k.data()[((gi * c + ci) * kk + a) * kk + b];
                            }
                        }
                    }
                    out.data_mut()[(gi * ho + y) * wo + xo] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut s = RandomStream::new(1);
        let x = random(&[1, 5, 4], &mut s);
        let k = Tensor::from_vec(&[1, 1, 1, 1], alloc::vec![1.0]).unwrap();
        assert_eq!(conv2d_valid(&x, &k, &[0.0]).unwrap(), x);
        assert_eq!(conv2d_full(&x, &k).unwrap(), x);
    }

    #[test]
    fn three_by_three_window_sums() {
        let x = Tensor::from_vec(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0f32);
        let y = conv2d_valid(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn output_extent_relation() {
        // visible 12, filter 5 -> hidden 8
        let x = Tensor::<f32>::zeros(&[1, 12, 12]);
        let k = Tensor::<f32>::zeros(&[2, 1, 5, 5]);
        assert_eq!(conv2d_valid(&x, &k, &[0.0, 0.0]).unwrap().shape(), &[2, 8, 8]);
        assert_eq!(conv_output_extent(12, 5, 1), Some(8));
        assert_eq!(conv_output_extent(28, 5, 2), Some(12));
        assert_eq!(conv_output_extent(4, 5, 1), None);
    }

    #[test]
    fn matches_naive_oracle_with_stride() {
        let mut s = RandomStream::new(9);
        for stride in 1..=3 {
            let x = random(&[3, 11, 9], &mut s);
            let k = random(&[4, 3, 3, 3], &mut s);
            let b = [0.1, -0.2, 0.3, 0.0];
            let got = conv2d(&x, &k, Some(&b), stride).unwrap();
            let want = naive_conv(&x, &k, &b, stride);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_kernel_full_is_zero() {
        let mut s = RandomStream::new(2);
        let y = random(&[2, 4, 4], &mut s);
        let k = Tensor::<f64>::zeros(&[2, 3, 3, 3]);
        let out = conv2d_full(&y, &k).unwrap();
        assert_eq!(out.shape(), &[3, 6, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_is_adjoint_of_valid() {
        let mut s = RandomStream::new(5);
        let x = random(&[2, 6, 6], &mut s);
        let k = random(&[3, 2, 3, 3], &mut s);
        let y = random(&[3, 4, 4], &mut s);
        let lhs = conv2d_valid(&x, &k, &[0.0; 3]).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv2d_full(&y, &k).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0));
    }

    #[test]
    fn strided_input_grad_is_adjoint() {
        let mut s = RandomStream::new(6);
        let x = random(&[2, 9, 9], &mut s);
        let k = random(&[3, 2, 3, 3], &mut s);
        let y = random(&[3, 4, 4], &mut s);
        let lhs = conv2d(&x, &k, None, 2).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv2d_input_grad(&y, &k, (2, 9, 9), 2).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn kernel_grad_is_adjoint_in_kernel() {
        let mut s = RandomStream::new(7);
        let x = random(&[2, 8, 8], &mut s);
        let k = random(&[3, 2, 3, 3], &mut s);
        let y = random(&[3, 3, 3], &mut s);
        let lhs = conv2d(&x, &k, None, 2).unwrap().dot(&y).unwrap();
        let (gk, gb) = conv2d_kernel_grad(&x, &y, 3, 2).unwrap();
        assert!((lhs - k.dot(&gk).unwrap()).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert!((gb[1] - y.outer(1).iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 5, 5]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d_valid(&x, &k, &[0.0]), Err(crate::Error::Config(_))));
        let k = Tensor::<f32>::zeros(&[1, 2, 6, 6]);
        assert!(conv2d_valid(&x, &k, &[0.0]).is_err());
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let x = Tensor::<f32>::full(&[1, 2, 2], f32::MAX);
        let k = Tensor::<f32>::full(&[1, 1, 2, 2], f32::MAX);
        assert!(matches!(conv2d_valid(&x, &k, &[0.0]), Err(crate::Error::Numeric(_))));
    }
}
