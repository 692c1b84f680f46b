//! Dense networks with phase-shifted sine hidden layers and an affine head.

pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod params;
pub mod train;

pub use layer::{quantum_layer_backward, quantum_layer_forward, LayerGrads};
pub use network::{
    argmax, backward_into, batch_loss_and_grad, example_loss_and_grad, forward, local_loss, logits,
    predict, softmax_cross_entropy, ActivationCache,
};
pub use params::{pack, unpack, Gradients, LayerParams, LayerSpan, ParamVector, QennArchitecture};
pub use train::{sgd_step, train_epochs, SgdConfig};

/// Fresh parameters for `arch` from `seed`.
pub fn init_params(arch: &QennArchitecture, seed: u64) -> ParamVector {
    arch.init_params(&mut crate::rng::seeded(seed))
}
