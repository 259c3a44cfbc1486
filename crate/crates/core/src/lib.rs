//! Spectral PDE simulation, dataset containers, and a multi-scale
//! shifted-window transformer surrogate with supervised and flow-matching
//! training — small enough to run end to end on a laptop CPU.

pub mod attention;
pub mod fields;
pub mod inference;
pub mod model;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod tokens;
pub mod training;

pub use tensor::{Dtype, Graph, Scalar, Tensor, TensorError, Var};
