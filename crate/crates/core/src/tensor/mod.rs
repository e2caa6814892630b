//! Dense tensors with a reverse-mode tape covering exactly the operations the
//! network uses.

mod dense;
mod gradcheck;
mod graph;
mod params;

pub use dense::{Scalar, Tensor};
pub use gradcheck::{grad_check, grad_check_inputs, GradCheck, DEFAULT_EPS};
pub use graph::{Graph, Var, VertexMap, LEAKY_SLOPE, NORM_EPS};
pub use params::{Bound, ParamId, ParamStore, Parameter};
