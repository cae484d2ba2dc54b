//! Minimal reverse-mode differentiation, optimizer, and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradcheck, relative_error, GradcheckReport};
pub use params::{Bound, ParamStore};
pub use tape::{grouped_softmax_values, Tape, Var};
pub use tensor::Tensor;
