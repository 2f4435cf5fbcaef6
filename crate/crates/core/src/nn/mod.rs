//! Dense classifier, losses with closed-form gradients, and momentum SGD.

mod checkpoint;
mod loss;
mod model;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{
    argmax, ce_loss, ce_loss_and_grad, ce_loss_and_grad_into, gce_loss_and_grad,
    gce_loss_and_grad_into, softmax_with_temperature, LossKind, GCE_PROB_FLOOR,
};
pub use model::{Activation, ClassifierModel, DenseLayer, GradientBuffer, Workspace};
pub use optim::{sgd_step, OptimizerState, SgdConfig, StepDecay};
