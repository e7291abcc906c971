//! Dense `f64` tensors, a reverse-mode tape, dense and recurrent layers,
//! optimizers, finite-difference checks and the checkpoint format.

mod checkpoint;
mod gradcheck;
mod layers;
mod module;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{Activation, GruCell, Linear, Mlp};
pub use module::{copy_params, max_param_gap, polyak_update, Module};
pub use optim::{clip_grad_norm, Adam, Sgd};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{huber_quantile_grad, huber_quantile_value};
