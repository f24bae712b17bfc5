//! Adaptive-moment (Adam) parameter updates.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::network::{GradientSet, Network};

/// Update hyperparameters. Defaults: lr 1e-3, decay 0.9/0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step count,
/// shape-locked to the network it was created for.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    params: AdamParams,
    step: u64,
    moments: Vec<LayerMoments>,
}

#[derive(Debug, Clone)]
struct LayerMoments {
    m_weights: Array2<f64>,
    v_weights: Array2<f64>,
    m_biases: Array1<f64>,
    v_biases: Array1<f64>,
}

impl OptimizerState {
    pub fn new(net: &Network, params: AdamParams) -> Self {
        let moments = net
            .layers()
            .iter()
            .map(|l| LayerMoments {
                m_weights: Array2::zeros((l.out_dim(), l.in_dim())),
                v_weights: Array2::zeros((l.out_dim(), l.in_dim())),
                m_biases: Array1::zeros(l.out_dim()),
                v_biases: Array1::zeros(l.out_dim()),
            })
            .collect();
        OptimizerState {
            params,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> AdamParams {
        self.params
    }

    /// Applies one Adam update in place and increments the step count.
    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<()> {
        if !grads.matches(net) || self.moments.len() != net.layers().len() {
            return Err(Error::Shape {
                expected: "gradients and optimizer state matching the network".into(),
                got: "mismatched tensor shapes".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((layer, grad), mom) in net
            .layers_mut()
            .iter_mut()
            .zip(grads.layers())
            .zip(self.moments.iter_mut())
        {
            update_tensor(
                layer.weights_mut().as_slice_mut().expect("contiguous weights"),
                grad.d_weights.as_slice().expect("contiguous gradient"),
                mom.m_weights.as_slice_mut().expect("contiguous moment"),
                mom.v_weights.as_slice_mut().expect("contiguous moment"),
                learning_rate,
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
            );
            update_tensor(
                layer.biases_mut().as_slice_mut().expect("contiguous biases"),
                grad.d_biases.as_slice().expect("contiguous gradient"),
                mom.m_biases.as_slice_mut().expect("contiguous moment"),
                mom.v_biases.as_slice_mut().expect("contiguous moment"),
                learning_rate,
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}
