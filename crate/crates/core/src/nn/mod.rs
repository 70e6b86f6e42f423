//! Minimal differentiable-computation substrate: 1D conv / transposed conv,
//! dense layers, batch norm, leaky-ReLU, softmax, Xavier init, Adam, and a
//! finite-difference gradient checker. All math is f64; forward passes cache
//! what their backward passes need and gradients accumulate into named slots.

mod act;
mod adam;
mod checkpoint;
mod conv;
mod dense;
mod gradcheck;
mod init;
mod norm;

pub use act::{leaky_relu, leaky_relu_backward, softmax_rows, LEAKY_SLOPE};
pub use adam::{adam_step, Adam};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{conv1d_forward, conv1d_out_len, Conv1d, Conv1dCache, ConvTranspose1d, DeconvCache};
pub use dense::{Dense, DenseCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use init::xavier_normal;
pub use norm::{BatchNorm1d, BnCache};

use ndarray::{ArrayD, ArrayViewMutD};

use crate::error::{Error, Result};

/// Forward-pass mode.
///
/// `Train` uses batch statistics in batch norm and updates running statistics;
/// `TrainFrozen` uses batch statistics without the running-stat side effect
/// (pure, for gradient checking); `Eval` uses running statistics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    TrainFrozen,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train | Mode::TrainFrozen)
    }
}

/// One named parameter tensor with its paired gradient slot.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn assert_finite(&self, path: &str) -> Result<()> {
        if self.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter `{path}`")));
        }
        Ok(())
    }
}

/// Anything holding named parameters. Paths are stable across save/load and
/// visited in a fixed code-defined order.
pub trait HasParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    /// Non-trainable state (batch-norm running statistics). Saved in
    /// checkpoints, skipped by the optimizer and the gradient checker.
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Param)) {}

    fn visit_all(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.visit_params(f);
        self.visit_buffers(f);
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    /// Flat snapshot of all parameter values, in visit order.
    fn flat_values(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.extend(p.value.iter().copied()));
        out
    }

    /// Flat snapshot of all gradients, in visit order.
    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.extend(p.grad.iter().copied()));
        out
    }

    /// Overwrite all parameter values from a flat slice, in visit order.
    fn load_flat_values(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_params(&mut |_, p| {
            let n = p.len();
            for (dst, src) in p.value.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Names of parameters whose gradient contains a non-finite entry.
    fn non_finite_grad(&mut self) -> Option<String> {
        let mut bad = None;
        self.visit_params(&mut |path, p| {
            if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(path.to_string());
            }
        });
        bad
    }
}

/// Helper for composing parameter paths (`prefix.name`).
pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Mutable view over a parameter coordinate, used by the gradient checker.
pub fn perturb_coord(view: &mut ArrayViewMutD<'_, f64>, flat_idx: usize, delta: f64) {
    let slice = view.as_slice_mut().expect("contiguous parameter storage");
    slice[flat_idx] += delta;
}
