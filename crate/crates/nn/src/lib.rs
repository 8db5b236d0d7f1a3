//! Dense tensors with reverse-mode autodiff and the layers needed by the
//! grounding network.

pub mod checks;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{ParamGrads, ParamId, ParamSet};
pub use tensor::{Scalar, ShapeError, Tensor};
