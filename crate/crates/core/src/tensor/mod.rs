//! Dense tensors, reverse-mode autodiff, layers, Adam and checkpoints.

mod array;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod store;

pub use array::Tensor;
pub use gradcheck::{
    gradient_check, layer_gradient_suite, relative_error, GradCheckReport, RELATIVE_FLOOR,
};
pub use graph::{Gradients, Graph, Mode, Var};
pub use layers::{CellKind, Layer, LayerConfig, Sequential};
pub use optim::{adam_step, AdamState};
pub use store::{Init, ParameterStore, CHECKPOINT_MAGIC};
