//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every backward rule is expressed with recordable operations, so gradients
//! computed with `create_graph = true` can be differentiated again. This is
//! what gradient-norm penalties on a critic's input need.

mod backward;
pub mod conv;
mod float;
pub mod optim;
mod params;
mod tensor;
mod var;

pub use backward::{grad, grad_values};
pub use conv::ConvGeom;
pub use float::Float;
pub use params::{Bound, ParamStore};
pub use tensor::{numel, Tensor};
pub use var::{is_grad_enabled, no_grad, Var};
