//! Dense tensors, reverse-mode differentiation, convolution, AdamW and the
//! `EVDW` parameter file format.

pub mod checkpoint;
pub mod conv;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{clip_grad_norm, AdamW};
pub use params::ParamStore;
pub use tape::{sigmoid, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
