//! Elman recurrent network with manual backpropagation through time.

mod bptt;
mod model;
mod nonlin;

pub use bptt::{
    backward, forward, hidden_grad_norms, loss, loss_and_gradients, ForwardTape, Gradients,
    TransitionGrad,
};
pub use model::{Batch, InitKind, RnnModel, Targets, Transition, TransitionKind};
pub use nonlin::{activate, apply_nonlinearity, JacobianRecord, Nonlinearity};
