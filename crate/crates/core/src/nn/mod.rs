//! Minimal neural-network toolkit: autodiff tape, parameter registry,
//! multilayer perceptrons and Adam.

mod mlp;
mod params;
mod tape;

pub use mlp::Mlp;
pub use params::{Adam, ParamId, ParamStore};
pub use tape::{log_sigmoid, sigmoid, Grads, Tape, Var};
