//! Minimal reverse-mode differentiation over dense 2-D tensors, plus the
//! optimiser and initialiser used for training.

mod gradcheck;
mod init;
mod optim;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheck};
pub use init::{derive_seed, xavier_bound, xavier_init};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{bce, sigmoid, Reduction, Tape, Var, BCE_EPS};
pub use tensor::{dot, Tensor};
