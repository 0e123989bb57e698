//! Dense matrices with reverse-mode differentiation, a finite-difference
//! gradient checker and the `SGW1` parameter checkpoint format.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{check_gradients, relative_error, GradCheck, GradReport, ParamGradError, DEFAULT_APEX_RATIO, DEFAULT_EPS_ABS};
pub use graph::{pairwise_distance, EntryTerm, EntryTerms, Graph, NodeId, Op};
pub use matrix::Matrix;
