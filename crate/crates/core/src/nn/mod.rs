//! Dense-tensor network substrate: layers, loss, optimiser, gradient check.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

pub use gradcheck::{
    check_layer_kinds, grad_check, grad_check_with, GradCheckOptions, GradCheckReport,
};
pub use layers::{LayerCache, LayerSpec, Mode};
pub use loss::{argmax, softmax_cross_entropy, LossOutput};
pub use network::{network_backward, network_forward, ForwardTrace, Gradients, Network};
pub use optim::sgd_momentum_step;
