use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

use super::{join_path, xavier_normal, Param};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Output length of a 1D cross-correlation.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// Lay out sliding windows of `x` as a `[c_in*k, batch*l_out]` matrix.
fn im2col(x: &ArrayView3<'_, f64>, kernel: usize, stride: usize, pad: usize) -> (Array2<f64>, usize) {
    let (batch, c_in, len) = x.dim();
    let l_out = conv1d_out_len(len, kernel, stride, pad);
    let mut cols = Array2::<f64>::zeros((c_in * kernel, batch * l_out));
    for ci in 0..c_in {
        for kk in 0..kernel {
            let row = ci * kernel + kk;
            let mut dst = cols.row_mut(row);
            let dst = dst.as_slice_mut().unwrap();
            for b in 0..batch {
                let src = x.index_axis(Axis(0), b);
                let src = src.index_axis(Axis(0), ci);
                let src = src.as_slice().unwrap();
                let base = b * l_out;
                for t in 0..l_out {
                    let pos = t * stride + kk;
                    if pos >= pad && pos - pad < len {
                        dst[base + t] = src[pos - pad];
                    }
                }
            }
        }
    }
    (cols, l_out)
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input.
fn col2im(
    dcols: &Array2<f64>,
    batch: usize,
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let l_out = (len + 2 * pad - kernel) / stride + 1;
    let mut dx = Array3::<f64>::zeros((batch, c_in, len));
    for ci in 0..c_in {
        for kk in 0..kernel {
            let row = ci * kernel + kk;
            let src = dcols.row(row);
            let src = src.as_slice().unwrap();
            for b in 0..batch {
                let mut dst = dx.index_axis_mut(Axis(0), b);
                let mut dst = dst.index_axis_mut(Axis(0), ci);
                let dst = dst.as_slice_mut().unwrap();
                let base = b * l_out;
                for t in 0..l_out {
                    let pos = t * stride + kk;
                    if pos >= pad && pos - pad < len {
                        dst[pos - pad] += src[base + t];
                    }
                }
            }
        }
    }
    dx
}

fn matmul_to_output(
    y2: &Array2<f64>,
    bias: Option<&Array1<f64>>,
    batch: usize,
    c_out: usize,
    l_out: usize,
) -> Array3<f64> {
    let mut y = Array3::<f64>::zeros((batch, c_out, l_out));
    for co in 0..c_out {
        let row = y2.row(co);
        let row = row.as_slice().unwrap();
        let b0 = bias.map(|b| b[co]).unwrap_or(0.0);
        for b in 0..batch {
            let mut dst = y.index_axis_mut(Axis(0), b);
            let mut dst = dst.index_axis_mut(Axis(0), co);
            let dst = dst.as_slice_mut().unwrap();
            for t in 0..l_out {
                dst[t] = row[b * l_out + t] + b0;
            }
        }
    }
    y
}

fn output_to_matrix(dy: &ArrayView3<'_, f64>) -> Array2<f64> {
    let (batch, c_out, l_out) = dy.dim();
    let mut dy2 = Array2::<f64>::zeros((c_out, batch * l_out));
    for co in 0..c_out {
        let mut dst = dy2.row_mut(co);
        let dst = dst.as_slice_mut().unwrap();
        for b in 0..batch {
            let src = dy.index_axis(Axis(0), b);
            let src = src.index_axis(Axis(0), co);
            let src = src.as_slice().unwrap();
            dst[b * l_out..(b + 1) * l_out].copy_from_slice(src);
        }
    }
    dy2
}

/// One-shot cross-correlation with standard `floor((l + 2p - k)/s) + 1`
/// output-length semantics. `weights` is `[c_out, c_in, k]`.
pub fn conv1d_forward(
    x: &ArrayView3<'_, f64>,
    weights: &ArrayView3<'_, f64>,
    bias: Option<&Array1<f64>>,
    stride: usize,
    pad: usize,
) -> Result<Array3<f64>> {
    let (_, c_in, len) = x.dim();
    let (c_out, w_cin, kernel) = weights.dim();
    if w_cin != c_in {
        return Err(Error::shape("conv1d input channels", w_cin, c_in));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
    }
    if len + 2 * pad < kernel {
        return Err(Error::shape(
            "conv1d kernel vs input length",
            format!("kernel <= {}", len + 2 * pad),
            kernel,
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape("conv1d bias", c_out, b.len()));
        }
    }
    let (cols, l_out) = im2col(x, kernel, stride, pad);
    let w2 = weights
        .to_shape((c_out, c_in * kernel))
        .expect("weight reshape")
        .to_owned();
    let y2 = w2.dot(&cols);
    let (batch, ..) = x.dim();
    Ok(matmul_to_output(&y2, bias, batch, c_out, l_out))
}

/// Cached activations for the backward pass of [`Conv1d`].
pub struct Conv1dCache {
    cols: Array2<f64>,
    batch: usize,
    in_len: usize,
    l_out: usize,
}

/// 1D convolution layer (cross-correlation), weight `[c_out, c_in, k]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        let fan_out = c_out * kernel;
        let weight = xavier_normal(&[c_out, c_in, kernel], fan_in, fan_out, rng);
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])));
        Conv1d {
            weight: Param::new(weight),
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        conv1d_out_len(len, self.kernel, self.stride, self.pad)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Conv1dCache) {
        let (batch, _, in_len) = x.dim();
        let (cols, l_out) = im2col(&x.view(), self.kernel, self.stride, self.pad);
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.c_out, self.c_in * self.kernel))
            .expect("weight reshape");
        let y2 = w2.dot(&cols);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias dim");
        let y = matmul_to_output(&y2, Some(&bias.to_owned()), batch, self.c_out, l_out);
        (
            y,
            Conv1dCache {
                cols,
                batch,
                in_len,
                l_out,
            },
        )
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Array3<f64>, cache: &Conv1dCache) -> Array3<f64> {
        let dy2 = output_to_matrix(&dy.view());
        let dw2 = dy2.dot(&cache.cols.t());
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.c_out, self.c_in * self.kernel))
                .expect("weight grad reshape");
            wgrad += &dw2;
        }
        {
            let db = dy2.sum_axis(Axis(1));
            let mut bgrad = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("bias grad dim");
            bgrad += &db;
        }
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.c_out, self.c_in * self.kernel))
            .expect("weight reshape");
        let dcols = w2.t().dot(&dy2);
        debug_assert_eq!(cache.l_out * cache.batch, dy2.ncols());
        col2im(
            &dcols,
            cache.batch,
            self.c_in,
            cache.in_len,
            self.kernel,
            self.stride,
            self.pad,
        )
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        f(&join_path(prefix, "bias"), &mut self.bias);
    }
}

/// Cached state for the backward pass of [`ConvTranspose1d`].
pub struct DeconvCache {
    inner: Conv1dCache,
    in_len: usize,
}

/// 1D transposed convolution, weight `[c_in, c_out, k]`.
///
/// Realized as a stride-1 cross-correlation over the zero-stuffed input with
/// the kernel flipped, which makes it the exact adjoint of [`Conv1d`] with the
/// same (kernel, stride, pad).
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: Param,
    pub bias: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        let fan_out = c_out * kernel;
        let weight = xavier_normal(&[c_in, c_out, kernel], fan_in, fan_out, rng);
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])));
        ConvTranspose1d {
            weight: Param::new(weight),
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            output_pad,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad
    }

    /// Zero-stuffed, edge-padded copy of `x` on which a stride-1 correlation
    /// with the flipped kernel equals the transposed convolution.
    fn stuff(&self, x: &Array3<f64>) -> Array3<f64> {
        let (batch, c_in, len) = x.dim();
        let pl = self.kernel - 1 - self.pad;
        let pr = self.kernel - 1 - self.pad + self.output_pad;
        let stuffed_len = (len - 1) * self.stride + 1 + pl + pr;
        let mut out = Array3::<f64>::zeros((batch, c_in, stuffed_len));
        for b in 0..batch {
            for ci in 0..c_in {
                for t in 0..len {
                    out[[b, ci, pl + t * self.stride]] = x[[b, ci, t]];
                }
            }
        }
        out
    }

    fn flipped_w2(&self) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("deconv weight dim");
        let mut w2 = Array2::<f64>::zeros((self.c_out, self.c_in * self.kernel));
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for kk in 0..self.kernel {
                    w2[[co, ci * self.kernel + kk]] = w[[ci, co, self.kernel - 1 - kk]];
                }
            }
        }
        w2
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, DeconvCache) {
        let (batch, _, in_len) = x.dim();
        let stuffed = self.stuff(x);
        let (cols, l_out) = im2col(&stuffed.view(), self.kernel, 1, 0);
        let w2 = self.flipped_w2();
        let y2 = w2.dot(&cols);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias dim")
            .to_owned();
        let y = matmul_to_output(&y2, Some(&bias), batch, self.c_out, l_out);
        debug_assert_eq!(l_out, self.out_len(in_len));
        let (_, _, stuffed_len) = stuffed.dim();
        (
            y,
            DeconvCache {
                inner: Conv1dCache {
                    cols,
                    batch,
                    in_len: stuffed_len,
                    l_out,
                },
                in_len,
            },
        )
    }

    pub fn backward(&mut self, dy: &Array3<f64>, cache: &DeconvCache) -> Array3<f64> {
        let dy2 = output_to_matrix(&dy.view());
        // dW through the flipped layout, then un-flip into [c_in, c_out, k].
        let dw2 = dy2.dot(&cache.inner.cols.t());
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("deconv weight grad dim");
            for co in 0..self.c_out {
                for ci in 0..self.c_in {
                    for kk in 0..self.kernel {
                        wgrad[[ci, co, self.kernel - 1 - kk]] += dw2[[co, ci * self.kernel + kk]];
                    }
                }
            }
        }
        {
            let db = dy2.sum_axis(Axis(1));
            let mut bgrad = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("bias grad dim");
            bgrad += &db;
        }
        let w2 = self.flipped_w2();
        let dcols = w2.t().dot(&dy2);
        let dstuffed = col2im(
            &dcols,
            cache.inner.batch,
            self.c_in,
            cache.inner.in_len,
            self.kernel,
            1,
            0,
        );
        // Pick the stuffed positions back out.
        let pl = self.kernel - 1 - self.pad;
        let mut dx = Array3::<f64>::zeros((cache.inner.batch, self.c_in, cache.in_len));
        for b in 0..cache.inner.batch {
            for ci in 0..self.c_in {
                for t in 0..cache.in_len {
                    dx[[b, ci, t]] = dstuffed[[b, ci, pl + t * self.stride]];
                }
            }
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        f(&join_path(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_kernel_preserves_input() {
        // kernel [1] with stride 1, no pad is the identity map.
        let x = arr3(&[[[1.0, -2.0, 3.5, 0.25]]]);
        let w = arr3(&[[[1.0]]]);
        let y = conv1d_forward(&x.view(), &w.view(), None, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_convolution_all_ones_kernel() {
        let x = arr3(&[[[1.0, 2.0, 3.0, 4.0]]]);
        let w = arr3(&[[[1.0, 1.0, 1.0]]]);
        let y = conv1d_forward(&x.view(), &w.view(), None, 1, 0).unwrap();
        assert_eq!(y, arr3(&[[[6.0, 9.0]]]));
    }

    #[test]
    fn stride_two_halves_length() {
        // kernel 10, pad 4, stride 2 on length 512 gives 256.
        assert_eq!(conv1d_out_len(512, 10, 2, 4), 256);
        assert_eq!(conv1d_out_len(256, 10, 2, 4), 128);
        assert_eq!(conv1d_out_len(128, 10, 2, 4), 64);
    }

    #[test]
    fn deconv_mirrors_conv_lengths() {
        let mut r = rng();
        let de = ConvTranspose1d::new(4, 2, 10, 2, 4, 0, &mut r);
        assert_eq!(de.out_len(64), 128);
        assert_eq!(de.out_len(128), 256);
        assert_eq!(de.out_len(256), 512);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = arr3(&[[[1.0, 2.0, 3.0]]]);
        let w = Array3::<f64>::zeros((1, 2, 3));
        assert!(conv1d_forward(&x.view(), &w.view(), None, 1, 0).is_err());
    }

    /// <conv(x), y> == <x, conv_transpose(y)> with tied weights: the transposed
    /// convolution is the exact adjoint of the convolution.
    #[test]
    fn deconv_is_adjoint_of_conv() {
        use rand::Rng;
        let mut r = rng();
        let (c_in, c_out, k, s, p) = (3, 5, 10, 2, 4);
        let conv = Conv1d::new(c_in, c_out, k, s, p, &mut r);
        let mut de = ConvTranspose1d::new(c_out, c_in, k, s, p, 0, &mut r);
        // Tie: de.weight[ci_out=c, co=ci, k] laid out as [c_out, c_in, k] of conv.
        de.weight.value.assign(&conv.weight.value);
        for p in [&mut de.bias] {
            p.value.fill(0.0);
        }
        let len = 32;
        let l_out = conv.out_len(len);
        let x = Array3::from_shape_fn((2, c_in, len), |_| r.gen_range(-1.0..1.0));
        let y = Array3::from_shape_fn((2, c_out, l_out), |_| r.gen_range(-1.0..1.0));
        let mut conv_b = conv.clone();
        conv_b.bias.value.fill(0.0);
        let (cx, _) = conv_b.forward(&x);
        let (aty, _) = de.forward(&y);
        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()),
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }
}
