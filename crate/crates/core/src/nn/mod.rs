//! Minimal f64 neural-network substrate: tensors, a reverse-mode tape,
//! the handful of layers the model uses, and Adam.

mod layers;
mod optim;
mod tape;
mod tensor;

pub use layers::{Bound, Conv2d, GruCell, Linear, ParamSet};
pub use optim::Adam;
pub use tape::{sigmoid, softplus, CustomOp, Grads, Tape, Var};
pub use tensor::Tensor;

/// Collects the gradient of every entry of `bound` (None where untouched).
pub fn collect_grads(grads: &mut Grads, bound: &Bound) -> Vec<Option<Tensor>> {
    bound.vars().iter().map(|&v| grads.take(v)).collect()
}
