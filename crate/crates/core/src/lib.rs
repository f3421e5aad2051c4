//! Simulation of bucket-brigade quantum random access memory under router noise.

pub mod circuit;
pub mod error;
pub mod harness;
pub mod noise;
pub mod oracle;
pub mod pauli;
pub mod scalar;
pub mod sparse_state;
pub mod topology;
pub mod twirl;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SparseState64 = sparse_state::SparseState<f64>;
pub type SparseState32 = sparse_state::SparseState<f32>;
pub type LocalMatrix64 = sparse_state::LocalMatrix<f64>;
