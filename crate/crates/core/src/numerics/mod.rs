//! Matrices, parameter vectors, and the differentiation machinery used by
//! model training and by the cycle-consistency refinement: exact gradients,
//! and hypergradients of a loss evaluated after a sequence of unrolled SGD
//! steps with respect to per-example weights.

pub mod diff;
pub mod dual;
pub mod linalg;
pub mod matrix;
pub mod params;
pub mod unroll;

pub use diff::{finite_difference_gradient, gradient, DifferentiableLoss};
pub use dual::{Dual, Scalar};
pub use linalg::{pca_fit, symmetric_eigen, Pca};
pub use matrix::DenseMatrix;
pub use params::{ParamVector, Segment};
pub use unroll::{hypergradient, unroll, ExampleLoss, TraceStep, UnrolledTrace};
