//! Feed-forward network, regularised objectives and their gradients,
//! Hutchinson curvature estimates, AdaHessian and the training loop.

mod network;
mod objective;
mod optim;
mod train;

pub use network::{Activation, DropoutMasks, Head, Network, NetworkSpec};
pub use objective::{
    backward, backward_masked, objective, objective_masked, objective_parts, regulariser_value,
    Batch, ObjectiveParts, ObjectiveSpec, RegulariserKind, Task,
};
pub use optim::{hutchinson_diag, hutchinson_diag_with, AdaHessianState, ADAHESSIAN_EPS};
pub use train::{
    chunked_objective, chunked_parts, train, EarlyStopping, EpochRecord, OptimiserConfig,
    TrainHistory, TrainOutcome, TrainedModel, CHECKPOINT_VERSION,
};
