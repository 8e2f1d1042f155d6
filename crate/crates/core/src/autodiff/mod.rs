//! Reverse-mode differentiation, Adam and gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use gradcheck::{finite_difference_check, Coverage, ScalarModel};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var, CONV_KERNEL, GROUP_NORM_EPS};
pub use tensor::Tensor;

pub(crate) use tape::{encode_row, interp_nodes};
