//! Jacobi-Davidson solvers for a partial generalized singular value
//! decomposition (GSVD) of a large sparse matrix pair `(A, B)`.

pub mod dense;
pub mod driver;
pub mod error;
pub mod extraction;
pub mod inner;
pub mod oracle;
pub mod sparse;
pub mod subspace;

pub use error::{Error, Result};
