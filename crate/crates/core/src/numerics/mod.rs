//! Fixed-architecture neural numerics: the aggregator MLP, MSE, Adam,
//! finite-difference verification and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_gradcheck, GradCheckConfig, GradCheckReport};
pub use mlp::{mse, Dropout, DropoutMask, Grads, MlpDims, MlpParams};
pub use rng::SeededRng;
pub use tensor::Tensor;
