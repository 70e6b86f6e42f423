use ndarray::{Array2, Axis};

use super::{join_path, xavier_normal, Param};
use rand_chacha::ChaCha8Rng;

/// Cached input for the backward pass of [`Dense`].
pub struct DenseCache {
    x: Array2<f64>,
}

/// Fully-connected layer, weight `[in, out]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = xavier_normal(&[n_in, n_out], n_in, n_out, rng);
        let bias = Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[n_out])));
        Dense {
            weight: Param::new(weight),
            bias,
            n_in,
            n_out,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, DenseCache) {
        let w = self.w_view();
        let b = self.b_view();
        let mut y = x.dot(&w);
        y += &b;
        (y, DenseCache { x: x.clone() })
    }

    pub fn backward(&mut self, dy: &Array2<f64>, cache: &DenseCache) -> Array2<f64> {
        let dw = cache.x.t().dot(dy);
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("dense weight grad dim");
            wgrad += &dw;
        }
        {
            let db = dy.sum_axis(Axis(0));
            let mut bgrad = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("dense bias grad dim");
            bgrad += &db;
        }
        dy.dot(&self.w_view().t())
    }

    fn w_view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("dense weight dim")
    }

    fn b_view(&self) -> ndarray::ArrayView1<'_, f64> {
        self.bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("dense bias dim")
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        f(&join_path(prefix, "bias"), &mut self.bias);
    }
}
