//! Activation functions.

use ndarray::{Array, Axis, Dimension};

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Elementwise leaky ReLU, any dimensionality.
pub fn leaky_relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Backward of [`leaky_relu`] given the pre-activation input.
pub fn leaky_relu_backward<D: Dimension>(
    dy: &Array<f64, D>,
    pre: &Array<f64, D>,
) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &v| {
        if v < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    dx
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_rows(logits: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
