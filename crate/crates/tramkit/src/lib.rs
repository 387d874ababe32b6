//! File formats, parallel execution and the command-line front end for
//! `tramkit-core`.

pub mod cli;
pub mod error;
pub mod exec;
pub mod format;
pub mod io;

pub use error::{Error, Result};
