//! Robust blocked computation of generalized eigenvectors of real matrix
//! pencils in generalized real Schur form.

pub mod blocked;
pub mod cli;
pub mod error;
pub mod generate;
pub mod guard;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod oracle;
pub mod partition;
pub mod pencil;
pub mod scheduler;

pub use error::{Error, Result};
