//! Dense tensors, reverse-mode autodiff, 3×3 convolution and Adam.

mod adam;
mod gradcheck;
pub mod linalg;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use tape::{rho, Tape, Tensor, Var};
pub(crate) use tape::check_levels;
