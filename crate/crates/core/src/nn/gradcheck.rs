//! Finite-difference gradient oracle.
//!
//! Central differences over individual parameters, compared against the
//! analytic gradients from `backward`. The numeric side only ever re-runs
//! the forward/loss path, so it stays independent of the backward code it
//! is checking.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::loss::{cce_grad, cce_loss, mse_grad, mse_loss};
use crate::nn::network::{GradientSet, Network};

/// Relative-error denominator floor; keeps near-zero gradient pairs from
/// amplifying central-difference roundoff into spurious errors.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Anything whose parameters can be perturbed one scalar at a time while a
/// scalar loss is recomputed. `tensor` indexes (layer, weights|biases)
/// pairs flattened in a stable order.
pub trait GradCheckTarget {
    fn num_tensors(&self) -> usize;
    fn tensor_len(&self, tensor: usize) -> usize;
    fn get_param(&self, tensor: usize, idx: usize) -> f64;
    fn set_param(&mut self, tensor: usize, idx: usize, value: f64);
    /// Analytic gradient entry, computed once before checking starts.
    fn analytic_grad(&self, tensor: usize, idx: usize) -> f64;
    /// Recomputes the scalar loss under the current parameters.
    fn loss(&mut self) -> Result<f64>;
}

/// Runs the central-difference comparison over every parameter of `target`
/// (or an evenly strided subsample of at most `max_per_tensor` entries per
/// tensor) and returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn max_relative_error(
    target: &mut dyn GradCheckTarget,
    epsilon: f64,
    max_per_tensor: Option<usize>,
) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!(
            "gradient check epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let mut worst = 0.0_f64;
    for t in 0..target.num_tensors() {
        let len = target.tensor_len(t);
        if len == 0 {
            continue;
        }
        let stride = match max_per_tensor {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        let mut i = 0;
        while i < len {
            let original = target.get_param(t, i);
            target.set_param(t, i, original + epsilon);
            let plus = target.loss()?;
            target.set_param(t, i, original - epsilon);
            let minus = target.loss()?;
            target.set_param(t, i, original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = target.analytic_grad(t, i);
            let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
            i += stride;
        }
    }
    Ok(worst)
}

/// Loss attached to a network output for gradient checking.
pub enum LossKind {
    Mse(Array2<f64>),
    Cce(Vec<u8>),
}

/// A single network paired with a batch and a loss; the standard target
/// for checking `Network::backward`.
pub struct NetworkLossTarget {
    net: Network,
    batch: Array2<f64>,
    loss: LossKind,
    analytic: GradientSet,
}

impl NetworkLossTarget {
    pub fn new(net: Network, batch: Array2<f64>, loss: LossKind) -> Result<Self> {
        let (output, cache) = net.forward(&batch)?;
        let upstream = match &loss {
            LossKind::Mse(target) => mse_grad(&output, target)?,
            LossKind::Cce(labels) => cce_grad(&output, labels)?,
        };
        let (analytic, _) = net.backward(&cache, &upstream)?;
        Ok(Self {
            net,
            batch,
            loss,
            analytic,
        })
    }
}

impl GradCheckTarget for NetworkLossTarget {
    fn num_tensors(&self) -> usize {
        self.net.layers().len() * 2
    }

    fn tensor_len(&self, tensor: usize) -> usize {
        let layer = &self.net.layers()[tensor / 2];
        if tensor % 2 == 0 {
            layer.in_dim() * layer.out_dim()
        } else {
            layer.out_dim()
        }
    }

    fn get_param(&self, tensor: usize, idx: usize) -> f64 {
        let layer = &self.net.layers()[tensor / 2];
        if tensor % 2 == 0 {
            layer.weights().as_slice().expect("contiguous")[idx]
        } else {
            layer.biases()[idx]
        }
    }

    fn set_param(&mut self, tensor: usize, idx: usize, value: f64) {
        let layer = &mut self.net.layers_mut()[tensor / 2];
        if tensor % 2 == 0 {
            layer.weights_mut().as_slice_mut().expect("contiguous")[idx] = value;
        } else {
            layer.biases_mut()[idx] = value;
        }
    }

    fn analytic_grad(&self, tensor: usize, idx: usize) -> f64 {
        let grad = &self.analytic.layers()[tensor / 2];
        if tensor % 2 == 0 {
            grad.d_weights.as_slice().expect("contiguous")[idx]
        } else {
            grad.d_biases[idx]
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let (output, _) = self.net.forward(&self.batch)?;
        match &self.loss {
            LossKind::Mse(target) => mse_loss(&output, target),
            LossKind::Cce(labels) => cce_loss(&output, labels),
        }
    }
}

/// Checks every parameter of `net` against central differences.
pub fn grad_check(net: &Network, loss: LossKind, batch: &Array2<f64>, epsilon: f64) -> Result<f64> {
    grad_check_sampled(net, loss, batch, epsilon, None)
}

/// Like `grad_check` but checking at most `max_per_tensor` evenly strided
/// parameters per tensor; full networks at production widths are too large
/// to perturb exhaustively in routine runs.
pub fn grad_check_sampled(
    net: &Network,
    loss: LossKind,
    batch: &Array2<f64>,
    epsilon: f64,
    max_per_tensor: Option<usize>,
) -> Result<f64> {
    let mut target = NetworkLossTarget::new(net.clone(), batch.clone(), loss)?;
    max_relative_error(&mut target, epsilon, max_per_tensor)
}
