//! Minimal dense-network engine: parameter storage, batched forward pass,
//! loss functions, exact backpropagation, an adaptive-moment optimizer, and
//! a finite-difference gradient oracle.
//!
//! Everything is `f64`; batches are row-major (`batch × features`). Networks
//! are immutable during forward/backward, so disjoint batches can be
//! evaluated from multiple threads; parameter updates require `&mut`.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{
    grad_check, grad_check_sampled, max_relative_error, GradCheckTarget, LossKind,
    NetworkLossTarget,
};
pub use loss::{cce_grad, cce_loss, mse_grad, mse_loss, CCE_PROB_CLAMP};
pub use network::{Activation, DenseLayer, ForwardCache, GradientSet, LayerGrad, Network};
pub use optim::{AdamParams, OptimizerState};
