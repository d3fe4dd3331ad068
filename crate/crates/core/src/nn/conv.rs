//! 2-D convolution and transposed convolution via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Spatial geometry of one convolution (input plane to output plane).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent of a convolution along one axis, `None` if nonpositive.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

impl Geometry {
    pub fn new(
        channels: usize,
        (height, width): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (Some(out_h), Some(out_w)) = (
            conv_out_extent(height, kh, stride, padding),
            conv_out_extent(width, kw, stride, padding),
        ) else {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} stride {stride} padding {padding} does not fit a {height}x{width} input"
            )));
        };
        Ok(Geometry {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Horizontal output range `[lo, hi)` whose taps at column offset `kj` land inside the image.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let off = kj as isize - self.padding as isize;
        // ox*s + off >= 0  and  ox*s + off < width
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
        let hi_bound = self.width as isize - off;
        let hi = if hi_bound <= 0 {
            0
        } else {
            ((hi_bound as usize).div_ceil(s)).min(self.out_w)
        };
        (lo.min(hi), hi)
    }

    /// Unfold one C×H×W plane into a (C·kh·kw) × (out_h·out_w) matrix.
    pub fn im2col<T: Scalar>(&self, plane: &[T], cols: &mut [T]) {
        let n_cols = self.cols();
        let (h, w, s, p) = (self.height, self.width, self.stride, self.padding);
        let ox_ranges: Vec<(usize, usize)> = (0..self.kw).map(|kj| self.valid_ox(kj)).collect();
        for c in 0..self.channels {
            let src = &plane[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    let (lo, hi) = ox_ranges[kj];
                    for oy in 0..self.out_h {
                        let out_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let base = kj as isize - p as isize;
                        if s == 1 {
                            let start = (lo as isize + base) as usize;
                            out_row[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                out_row[ox] = src_row[(ox as isize * s as isize + base) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-add columns back into a C×H×W plane.
    pub fn col2im<T: Scalar>(&self, cols: &[T], plane: &mut [T]) {
        let n_cols = self.cols();
        let (h, w, s, p) = (self.height, self.width, self.stride, self.padding);
        let ox_ranges: Vec<(usize, usize)> = (0..self.kw).map(|kj| self.valid_ox(kj)).collect();
        for c in 0..self.channels {
            let dst = &mut plane[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    let (lo, hi) = ox_ranges[kj];
                    let base = kj as isize - p as isize;
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let src_row = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for ox in lo..hi {
                            dst_row[(ox as isize * s as isize + base) as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(Error::ShapeMismatch {
                op: "bias",
                lhs: b.shape().to_vec(),
                rhs: vec![channels],
            });
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Scalar>(output_grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = output_grad.dims4()?;
    let plane = h * w;
    let mut g = vec![T::zero(); c];
    for s in 0..n {
        for (ch, gv) in g.iter_mut().enumerate() {
            let start = (s * c + ch) * plane;
            *gv += output_grad.data()[start..start + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(&[c], g)
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geometry, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (oc, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d (input channels vs weight channels)",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::Config("convolution stride must be at least 1".into()));
    }
    Ok((Geometry::new(c, (h, w), (kh, kw), stride, padding)?, n, oc))
}

/// Cross-correlation with zero padding. `weight` is OutC×C×kh×kw.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, n, oc) = conv_geometry(input, weight, stride, padding)?;
    check_bias(bias, oc)?;
    let in_plane = g.channels * g.height * g.width;
    let out_plane = g.cols();
    let mut out = vec![T::zero(); n * oc * out_plane];
    let wdata = weight.data();
    out.par_chunks_mut(oc * out_plane)
        .zip(input.data().par_chunks(in_plane))
        .for_each(|(dst, src)| {
            if g.is_pointwise() {
                crate::tensor::matmul(oc, g.rows(), out_plane, wdata, src, dst);
            } else {
                let mut cols = vec![T::zero(); g.rows() * out_plane];
                g.im2col(src, &mut cols);
                crate::tensor::matmul(oc, g.rows(), out_plane, wdata, &cols, dst);
            }
            add_bias(dst, bias, out_plane);
        });
    Tensor::from_vec(&[n, oc, g.out_h, g.out_w], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not request the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the cached forward input.
pub fn conv2d_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    cached_input: Option<&Tensor<T>>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let input = cached_input
        .ok_or_else(|| Error::Usage("conv2d backward called without a forward cache".into()))?;
    let (g, n, oc) = conv_geometry(input, weight, stride, padding)?;
    let expected = [n, oc, g.out_h, g.out_w];
    if output_grad.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward (output grad vs forward output)",
            lhs: output_grad.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let rows = g.rows();
    let p = g.cols();
    let in_plane = g.channels * g.height * g.width;
    let wdata = weight.data();
    let dy = output_grad.data();

    let mut dw = vec![T::zero(); oc * rows];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * p }];
    for s in 0..n {
        let x = &input.data()[s * in_plane..(s + 1) * in_plane];
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        // dW += dY (oc×p) · colsᵀ (p×rows)
        T::gemm(
            oc,
            p,
            rows,
            T::one(),
            (&dy[s * oc * p..(s + 1) * oc * p], p as isize, 1),
            (cols_ref, 1, p as isize),
            T::one(),
            (&mut dw, rows as isize, 1),
        );
    }

    let dx = if want_input_grad {
        let mut dx = vec![T::zero(); n * in_plane];
        dx.par_chunks_mut(in_plane)
            .zip(dy.par_chunks(oc * p))
            .for_each(|(dst, dys)| {
                if g.is_pointwise() {
                    // dX = Wᵀ (rows×oc) · dY (oc×p)
                    T::gemm(
                        rows,
                        oc,
                        p,
                        T::one(),
                        (wdata, 1, rows as isize),
                        (dys, p as isize, 1),
                        T::zero(),
                        (dst, p as isize, 1),
                    );
                } else {
                    let mut dcols = vec![T::zero(); rows * p];
                    T::gemm(
                        rows,
                        oc,
                        p,
                        T::one(),
                        (wdata, 1, rows as isize),
                        (dys, p as isize, 1),
                        T::zero(),
                        (&mut dcols, p as isize, 1),
                    );
                    g.col2im(&dcols, dst);
                }
            });
        Some(Tensor::from_vec(input.shape(), dx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: dx,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: bias_grad(output_grad)?,
    })
}

/// Kernel and crop for a transposed convolution that upsamples by exactly `stride`.
///
/// Stride 1 uses a centred 3×3 kernel; larger strides use a `2·stride` kernel
/// cropped by `stride/2` on each side.
pub fn deconv_kernel_for_stride(stride: usize) -> Result<(usize, usize)> {
    match stride {
        0 => Err(Error::Config("deconvolution stride must be at least 1".into())),
        1 => Ok((3, 1)),
        s if s % 2 == 0 => Ok((2 * s, s / 2)),
        s => Err(Error::Config(format!(
            "deconvolution stride {s} is odd; only 1 or even strides upsample exactly"
        ))),
    }
}

fn deconv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geometry, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (wc, oc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "deconv2d (input channels vs weight channels)",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::Config("deconvolution stride must be at least 1".into()));
    }
    if kh != stride + 2 * padding || kw != stride + 2 * padding {
        return Err(Error::Config(format!(
            "deconvolution kernel {kh}x{kw} stride {stride} crop {padding} does not map {h}x{w} to {}x{}",
            stride * h,
            stride * w
        )));
    }
    // The transposed op is the adjoint of a conv whose input is the (upsampled) output.
    let g = Geometry::new(oc, (stride * h, stride * w), (kh, kw), stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok((g, n, c))
}

/// Transposed convolution, the exact adjoint of [`conv2d_forward`] with the same
/// kernel/stride/padding. `weight` is InC×OutC×kh×kw; output extents are `stride`×input.
pub fn deconv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, n, ic) = deconv_geometry(input, weight, stride, padding)?;
    let oc = g.channels;
    check_bias(bias, oc)?;
    let rows = g.rows();
    let p = g.cols();
    let out_plane = oc * g.height * g.width;
    let wdata = weight.data();
    let mut out = vec![T::zero(); n * out_plane];
    out.par_chunks_mut(out_plane)
        .zip(input.data().par_chunks(ic * p))
        .for_each(|(dst, x)| {
            let mut cols = vec![T::zero(); rows * p];
            // cols = Wᵀ (rows×ic) · x (ic×p)
            T::gemm(
                rows,
                ic,
                p,
                T::one(),
                (wdata, 1, rows as isize),
                (x, p as isize, 1),
                T::zero(),
                (&mut cols, p as isize, 1),
            );
            g.col2im(&cols, dst);
            add_bias(dst, bias, g.height * g.width);
        });
    Tensor::from_vec(&[n, oc, g.height, g.width], out)
}

pub fn deconv2d_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    cached_input: Option<&Tensor<T>>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let input = cached_input
        .ok_or_else(|| Error::Usage("deconv2d backward called without a forward cache".into()))?;
    let (g, n, ic) = deconv_geometry(input, weight, stride, padding)?;
    let oc = g.channels;
    let expected = [n, oc, g.height, g.width];
    if output_grad.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "deconv2d backward (output grad vs forward output)",
            lhs: output_grad.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let rows = g.rows();
    let p = g.cols();
    let out_plane = oc * g.height * g.width;
    let wdata = weight.data();
    let dy = output_grad.data();
    let x = input.data();

    let mut dw = vec![T::zero(); ic * rows];
    let mut dx = if want_input_grad {
        Some(vec![T::zero(); n * ic * p])
    } else {
        None
    };
    let mut cols = vec![T::zero(); rows * p];
    for s in 0..n {
        g.im2col(&dy[s * out_plane..(s + 1) * out_plane], &mut cols);
        // dW += x (ic×p) · colsᵀ (p×rows)
        T::gemm(
            ic,
            p,
            rows,
            T::one(),
            (&x[s * ic * p..(s + 1) * ic * p], p as isize, 1),
            (&cols, 1, p as isize),
            T::one(),
            (&mut dw, rows as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            crate::tensor::matmul(ic, rows, p, wdata, &cols, &mut dx[s * ic * p..(s + 1) * ic * p]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::from_vec(input.shape(), d)).transpose()?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: bias_grad(output_grad)?,
    })
}

/// Stateful convolution layer that keeps its forward input for the backward pass.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight,
            bias,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv2d_forward(input, &self.weight, Some(&self.bias), self.stride, self.padding)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&self, output_grad: &Tensor<T>) -> Result<ConvGrads<T>> {
        conv2d_backward(
            output_grad,
            self.cache.as_ref(),
            &self.weight,
            self.stride,
            self.padding,
            true,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadruple-loop direct convolution.
    fn direct_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &[f64],
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (oc, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, oc, oh, ow]);
        for s in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((s * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64) -> impl FnMut(usize) -> f64 {
        let mut state = seed;
        move |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let mut w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_conv_matches_direct_loop() {
        let x = Tensor::from_fn(&[1, 1, 5, 5], lcg(1));
        let w = Tensor::from_fn(&[1, 1, 3, 3], lcg(2));
        let y = conv2d_forward(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        let r = direct_conv(&x, &w, &[0.0], 2, 1);
        for (a, b) in y.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn padding_preserves_resolution() {
        let x = Tensor::<f32>::zeros(&[1, 2, 64, 64]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 64, 64]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn backward_without_cache_is_usage_error() {
        let conv = Conv2d::<f32>::new(
            Tensor::zeros(&[1, 1, 3, 3]),
            Tensor::zeros(&[1]),
            1,
            1,
        );
        let err = conv.backward(&Tensor::zeros(&[1, 1, 3, 3])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn identity_backward_passes_ones() {
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let mut conv = Conv2d::new(w, Tensor::zeros(&[1]), 1, 1);
        let x = Tensor::from_fn(&[1, 1, 4, 4], lcg(3));
        let y = conv.forward(&x).unwrap();
        let g = conv.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut conv = Conv2d::new(
            Tensor::from_fn(&[3, 2, 3, 3], lcg(4)),
            Tensor::from_fn(&[3], lcg(5)),
            1,
            1,
        );
        let x = Tensor::from_fn(&[1, 2, 6, 6], lcg(6));
        let y = conv.forward(&x).unwrap();
        let g = conv.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_stride_one_identity() {
        let x = Tensor::from_fn(&[1, 1, 5, 5], lcg(7));
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let (k, p) = deconv_kernel_for_stride(1).unwrap();
        assert_eq!((k, p), (3, 1));
        let y = deconv2d_forward(&x, &w, None, 1, p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn deconv_ones_kernel_tiles_pixels() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let y = deconv2d_forward(&x, &w, None, 2, 0).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn deconv_doubles_extent() {
        let (k, p) = deconv_kernel_for_stride(2).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 8, 32, 32]);
        let w = Tensor::<f32>::zeros(&[8, 4, k, k]);
        let y = deconv2d_forward(&x, &w, None, 2, p).unwrap();
        assert_eq!(y.shape(), &[1, 4, 64, 64]);
    }

    #[test]
    fn deconv_rejects_inexact_upsampling() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            deconv2d_forward(&x, &w, None, 2, 0),
            Err(Error::Config(_))
        ));
        assert!(deconv_kernel_for_stride(3).is_err());
    }
}
