//! Strided 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding.
//! Convolution weights are `[Cout, Cin, kh, kw]`; transposed-convolution
//! weights are `[Cin, Cout, kh, kw]`, so that a deconvolution sharing a
//! convolution's weight tensor and spec is exactly its adjoint.

use crate::error::{Error, Result};
use crate::scalar::{MatLayout, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    /// Stride 1 with `(k - 1) / 2` padding, which preserves spatial extent for odd `k`.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(in_channels, out_channels, kernel, 1, (kernel - 1) / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if self.in_channels == 0 || self.out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config(format!(
                "channels, kernel and stride must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((in + 2p - k) / s) + 1` on both axes.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |n: usize, k: usize, s: usize, p: usize, name: &str| {
            let padded = n + 2 * p;
            if padded < k {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name}: padded extent {padded} is smaller than kernel {k}"),
                ));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, "height")?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, "width")?,
        ))
    }

    /// `(in - 1) * s - 2p + k` on both axes.
    pub fn transposed_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |n: usize, k: usize, s: usize, p: usize, name: &str| {
            let full = (n - 1) * s + k;
            if full <= 2 * p {
                return Err(Error::shape(
                    "deconv2d",
                    format!("{name}: padding {p} consumes the whole output"),
                ));
            }
            Ok(full - 2 * p)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, "height")?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, "width")?,
        ))
    }

    fn patch_len(&self, channels: usize) -> usize {
        channels * self.kernel.0 * self.kernel.1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Geometry of the "large" side of a convolution: the conv input, or the
/// deconv output.
#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

/// Unrolls `[C, H, W]` into `[C*kh*kw, out_h*out_w]`.
fn im2col<T: Scalar>(img: &[T], g: Geometry, spec: &ConvSpec, col: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let cols = g.out_h * g.out_w;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
fn col2im<T: Scalar>(col: &[T], g: Geometry, spec: &ConvSpec, img: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let cols = g.out_h * g.out_w;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_conv_operands<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    weight_shape: [usize; 4],
) -> Result<(usize, usize, usize)> {
    spec.validate()?;
    let (b, c, h, w) = input.dims4(op)?;
    if c != spec.in_channels {
        return Err(Error::shape(
            op,
            format!("channel axis: input has {c}, spec expects {}", spec.in_channels),
        ));
    }
    if weights.shape() != weight_shape {
        return Err(Error::shape(
            op,
            format!("weights: expected {weight_shape:?}, got {:?}", weights.shape()),
        ));
    }
    Ok((b, h, w))
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, n: usize) -> Result<()> {
    if bias.shape() != [n] {
        return Err(Error::shape(
            op,
            format!("bias: expected [{n}], got {:?}", bias.shape()),
        ));
    }
    Ok(())
}

fn conv_weight_shape(spec: &ConvSpec) -> [usize; 4] {
    [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1]
}

fn deconv_weight_shape(spec: &ConvSpec) -> [usize; 4] {
    [spec.in_channels, spec.out_channels, spec.kernel.0, spec.kernel.1]
}

/// Forward convolution with an optional bias (hidden-to-hidden convolutions
/// in the LSTM cell carry none).
pub(crate) fn conv2d_forward_opt<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (batch, h, w) = check_conv_operands("conv2d_forward", input, weights, spec, conv_weight_shape(spec))?;
    if let Some(bias) = bias {
        check_bias("conv2d_forward", bias, spec.out_channels)?;
    }
    let (out_h, out_w) = spec.output_size(h, w)?;
    let g = Geometry {
        channels: spec.in_channels,
        h,
        w,
        out_h,
        out_w,
    };
    let k = spec.patch_len(spec.in_channels);
    let cols = out_h * out_w;
    let in_len = spec.in_channels * h * w;
    let out_len = spec.out_channels * cols;
    let mut out = Tensor::zeros(&[batch, spec.out_channels, out_h, out_w]);
    let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); k * cols] };
    for b in 0..batch {
        let img = &input.data()[b * in_len..(b + 1) * in_len];
        let rhs: &[T] = if spec.is_pointwise() {
            img
        } else {
            im2col(img, g, spec, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
        T::gemm(
            weights.data(),
            MatLayout::row_major(spec.out_channels, k),
            rhs,
            MatLayout::row_major(k, cols),
            dst,
            T::zero(),
        );
        if let Some(bias) = bias {
            for (plane, &bv) in dst.chunks_mut(cols).zip(bias.data()) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok(out)
}

/// `output[b,co,y,x] = bias[co] + sum_{ci,ky,kx} input[b,ci,y*sh+ky-ph,x*sw+kx-pw] * w[co,ci,ky,kx]`
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_forward_opt(input, weights, Some(bias), spec)
}

/// Gradients of [`conv2d_forward`]. When `need_input` is false the input
/// gradient is returned as zeros without being computed.
pub(crate) fn conv2d_backward_opt<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (batch, h, w) = check_conv_operands("conv2d_backward", input, weights, spec, conv_weight_shape(spec))?;
    let (out_h, out_w) = spec.output_size(h, w)?;
    grad_out.expect_shape(&[batch, spec.out_channels, out_h, out_w], "conv2d_backward")?;
    let g = Geometry {
        channels: spec.in_channels,
        h,
        w,
        out_h,
        out_w,
    };
    let k = spec.patch_len(spec.in_channels);
    let cols = out_h * out_w;
    let in_len = spec.in_channels * h * w;
    let out_len = spec.out_channels * cols;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weights.shape());
    let mut grad_b = Tensor::zeros(&[spec.out_channels]);
    let pointwise = spec.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * cols] };
    let mut gcol = if pointwise { Vec::new() } else { vec![T::zero(); k * cols] };

    for b in 0..batch {
        let img = &input.data()[b * in_len..(b + 1) * in_len];
        let gout = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (acc, plane) in grad_b.data_mut().iter_mut().zip(gout.chunks(cols)) {
            *acc = *acc + plane.iter().copied().sum();
        }
        let cols_view: &[T] = if pointwise {
            img
        } else {
            im2col(img, g, spec, &mut col);
            &col
        };
        // dW += dY [Cout, HW] * col^T [HW, K]
        T::gemm(
            gout,
            MatLayout::row_major(spec.out_channels, cols),
            cols_view,
            MatLayout::transposed(k, cols),
            grad_w.data_mut(),
            T::one(),
        );
        if need_input {
            let gin = &mut grad_input.data_mut()[b * in_len..(b + 1) * in_len];
            if pointwise {
                T::gemm(
                    weights.data(),
                    MatLayout::transposed(spec.out_channels, k),
                    gout,
                    MatLayout::row_major(spec.out_channels, cols),
                    gin,
                    T::zero(),
                );
            } else {
                // dcol [K, HW] = W^T [K, Cout] * dY [Cout, HW]
                T::gemm(
                    weights.data(),
                    MatLayout::transposed(spec.out_channels, k),
                    gout,
                    MatLayout::row_major(spec.out_channels, cols),
                    &mut gcol,
                    T::zero(),
                );
                col2im(&gcol, g, spec, gin);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(grad_out, input, weights, spec, true)
}

/// Transposed convolution: maps `[B, Cin, H, W]` to
/// `[B, Cout, (H-1)s-2p+k, (W-1)s-2p+k]`.
pub fn deconv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (batch, h, w) = check_conv_operands("deconv2d_forward", input, weights, spec, deconv_weight_shape(spec))?;
    check_bias("deconv2d_forward", bias, spec.out_channels)?;
    let (out_h, out_w) = spec.transposed_output_size(h, w)?;
    let g = Geometry {
        channels: spec.out_channels,
        h: out_h,
        w: out_w,
        out_h: h,
        out_w: w,
    };
    let k = spec.patch_len(spec.out_channels);
    let cols = h * w;
    let in_len = spec.in_channels * cols;
    let out_plane = out_h * out_w;
    let out_len = spec.out_channels * out_plane;
    let mut out = Tensor::zeros(&[batch, spec.out_channels, out_h, out_w]);
    let mut col = vec![T::zero(); k * cols];
    for b in 0..batch {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        // col [Cout*kk, HW] = W^T [Cout*kk, Cin] * x [Cin, HW]
        T::gemm(
            weights.data(),
            MatLayout::transposed(spec.in_channels, k),
            x,
            MatLayout::row_major(spec.in_channels, cols),
            &mut col,
            T::zero(),
        );
        let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
        col2im(&col, g, spec, dst);
        for (plane, &bv) in dst.chunks_mut(out_plane).zip(bias.data()) {
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let (batch, h, w) = check_conv_operands("deconv2d_backward", input, weights, spec, deconv_weight_shape(spec))?;
    let (out_h, out_w) = spec.transposed_output_size(h, w)?;
    grad_out.expect_shape(&[batch, spec.out_channels, out_h, out_w], "deconv2d_backward")?;
    let g = Geometry {
        channels: spec.out_channels,
        h: out_h,
        w: out_w,
        out_h: h,
        out_w: w,
    };
    let k = spec.patch_len(spec.out_channels);
    let cols = h * w;
    let in_len = spec.in_channels * cols;
    let out_plane = out_h * out_w;
    let out_len = spec.out_channels * out_plane;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weights.shape());
    let mut grad_b = Tensor::zeros(&[spec.out_channels]);
    let mut gcol = vec![T::zero(); k * cols];
    for b in 0..batch {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let gout = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (acc, plane) in grad_b.data_mut().iter_mut().zip(gout.chunks(out_plane)) {
            *acc = *acc + plane.iter().copied().sum();
        }
        im2col(gout, g, spec, &mut gcol);
        // dx [Cin, HW] = W [Cin, Cout*kk] * gcol [Cout*kk, HW]
        T::gemm(
            weights.data(),
            MatLayout::row_major(spec.in_channels, k),
            &gcol,
            MatLayout::row_major(k, cols),
            &mut grad_input.data_mut()[b * in_len..(b + 1) * in_len],
            T::zero(),
        );
        // dW [Cin, Cout*kk] += x [Cin, HW] * gcol^T [HW, Cout*kk]
        T::gemm(
            x,
            MatLayout::row_major(spec.in_channels, cols),
            &gcol,
            MatLayout::transposed(k, cols),
            grad_w.data_mut(),
            T::one(),
        );
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}
