//! Dense tensors, a define-by-run autodiff tape, Adam, gradient checking and
//! checkpoints.

mod adam;
mod checkpoint;
pub mod functional;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use functional::{dropout, layer_norm, softmax_rows, AttentionShape, Mode, LN_EPS};
pub use gradcheck::{
    analytic_gradient, grad_check, grad_check_against_f64, grad_check_with, numeric_gradient,
    numeric_gradient_with, relative_error, GradCheckReport, Objective, Stencil,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
