use ndarray::{Array1, Array3, Axis};

use super::{join_path, Mode, Param};

/// Cached state for the backward pass of [`BatchNorm1d`].
pub struct BnCache {
    x_hat: Array3<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

/// Per-channel batch normalization over `[batch, channel, length]` inputs.
///
/// Train modes normalize with biased batch statistics; eval mode uses the
/// running statistics only. Running statistics are buffers, not trainable
/// parameters.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        let ones = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[channels]), 1.0);
        let zeros = ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels]));
        BatchNorm1d {
            gamma: Param::new(ones.clone()),
            beta: Param::new(zeros.clone()),
            running_mean: Param::new(zeros),
            running_var: Param::new(ones),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn gamma_view(&self) -> ndarray::ArrayView1<'_, f64> {
        self.gamma
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    pub fn forward(&mut self, x: &Array3<f64>, mode: Mode) -> (Array3<f64>, BnCache) {
        let (batch, channels, len) = x.dim();
        assert_eq!(channels, self.channels, "batchnorm channel mismatch");
        let n = (batch * len) as f64;
        let (mean, var) = match mode {
            Mode::Train | Mode::TrainFrozen => {
                let mut mean = Array1::<f64>::zeros(channels);
                let mut var = Array1::<f64>::zeros(channels);
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..batch {
                        let lane = x.index_axis(Axis(0), b);
                        let lane = lane.index_axis(Axis(0), c);
                        s += lane.sum();
                    }
                    let m = s / n;
                    let mut v = 0.0;
                    for b in 0..batch {
                        let lane = x.index_axis(Axis(0), b);
                        let lane = lane.index_axis(Axis(0), c);
                        for &xv in lane.iter() {
                            let d = xv - m;
                            v += d * d;
                        }
                    }
                    mean[c] = m;
                    var[c] = v / n;
                }
                if mode == Mode::Train {
                    let mut rm = self
                        .running_mean
                        .value
                        .view_mut()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap();
                    let mut rv = self
                        .running_var
                        .value
                        .view_mut()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap();
                    for c in 0..channels {
                        rm[c] = (1.0 - self.momentum) * rm[c] + self.momentum * mean[c];
                        rv[c] = (1.0 - self.momentum) * rv[c] + self.momentum * var[c];
                    }
                }
                (mean, var)
            }
            Mode::Eval => {
                let rm = self
                    .running_mean
                    .value
                    .view()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap()
                    .to_owned();
                let rv = self
                    .running_var
                    .value
                    .view()
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap()
                    .to_owned();
                (rm, rv)
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let gamma = self.gamma_view();
        let beta = self
            .beta
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let mut x_hat = Array3::<f64>::zeros((batch, channels, len));
        let mut y = Array3::<f64>::zeros((batch, channels, len));
        for b in 0..batch {
            for c in 0..channels {
                let src = x.index_axis(Axis(0), b);
                let src = src.index_axis(Axis(0), c);
                let src = src.as_slice().unwrap();
                let mut xh = x_hat.index_axis_mut(Axis(0), b);
                let mut xh = xh.index_axis_mut(Axis(0), c);
                let xh = xh.as_slice_mut().unwrap();
                let mut dst = y.index_axis_mut(Axis(0), b);
                let mut dst = dst.index_axis_mut(Axis(0), c);
                let dst = dst.as_slice_mut().unwrap();
                let (m, is, g, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
                for t in 0..len {
                    let h = (src[t] - m) * is;
                    xh[t] = h;
                    dst[t] = g * h + be;
                }
            }
        }
        (
            y,
            BnCache {
                x_hat,
                inv_std,
                mode,
            },
        )
    }

    pub fn backward(&mut self, dy: &Array3<f64>, cache: &BnCache) -> Array3<f64> {
        let (batch, channels, len) = dy.dim();
        let n = (batch * len) as f64;
        let gamma = self.gamma_view().to_owned();
        let mut dgamma = Array1::<f64>::zeros(channels);
        let mut dbeta = Array1::<f64>::zeros(channels);
        let mut dx = Array3::<f64>::zeros((batch, channels, len));
        for c in 0..channels {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..batch {
                let dyl = dy.index_axis(Axis(0), b);
                let dyl = dyl.index_axis(Axis(0), c);
                let xhl = cache.x_hat.index_axis(Axis(0), b);
                let xhl = xhl.index_axis(Axis(0), c);
                for (g, h) in dyl.iter().zip(xhl.iter()) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            let g = gamma[c];
            let is = cache.inv_std[c];
            for b in 0..batch {
                let dyl = dy.index_axis(Axis(0), b);
                let dyl = dyl.index_axis(Axis(0), c);
                let dyl = dyl.as_slice().unwrap();
                let xhl = cache.x_hat.index_axis(Axis(0), b);
                let xhl = xhl.index_axis(Axis(0), c);
                let xhl = xhl.as_slice().unwrap();
                let mut dxl = dx.index_axis_mut(Axis(0), b);
                let mut dxl = dxl.index_axis_mut(Axis(0), c);
                let dxl = dxl.as_slice_mut().unwrap();
                match cache.mode {
                    Mode::Train | Mode::TrainFrozen => {
                        // Batch statistics contribute to the gradient.
                        for t in 0..len {
                            dxl[t] = g * is / n
                                * (n * dyl[t] - sum_dy - xhl[t] * sum_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        // Running statistics are constants.
                        for t in 0..len {
                            dxl[t] = g * is * dyl[t];
                        }
                    }
                }
            }
        }
        {
            let mut gg = self
                .gamma
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            gg += &dgamma;
            let mut bg = self
                .beta
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            bg += &dbeta;
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "gamma"), &mut self.gamma);
        f(&join_path(prefix, "beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "running_mean"), &mut self.running_mean);
        f(&join_path(prefix, "running_var"), &mut self.running_var);
    }
}
