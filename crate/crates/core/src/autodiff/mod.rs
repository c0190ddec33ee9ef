//! Eager reverse-mode differentiation over real and complex tensors.
//!
//! Complex values are differentiated on their real/imaginary view: the
//! gradient of a real loss with respect to a complex node `z` is stored as
//! `dL/dRe(z) + i dL/dIm(z)`. With that convention the adjoint of complex
//! multiplication by a constant `k` is multiplication by `conj(k)`, and the
//! adjoint of any linear map is its transpose under `<a, b> = Re(sum conj(a) b)`.

mod check;
mod graph;
pub mod ops;

pub use check::{adjoint_check, grad_check, grad_check_real, primitive_adjoint_check};
pub use graph::{Gradients, Graph, NodeId, Primitive};
pub use ops::PoolKind;
