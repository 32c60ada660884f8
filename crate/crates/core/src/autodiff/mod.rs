//! Dense tensors, a reverse-mode gradient tape, and Adam.
//!
//! A [`Tape`] lives for one forward/backward cycle. Parameters are owned
//! by a [`ParamStore`]; the tape copies their values in when they are first
//! used and [`Tape::backward`] adds gradients back into the store.

mod adam;
mod params;
mod tape;
mod tensor;

#[cfg(test)]
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use params::{xavier_uniform, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
