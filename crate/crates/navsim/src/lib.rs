//! File formats, run directories, reports and the parallel executor around
//! `navsim-core`. The `navsim` binary is a thin layer over [`cli`].

pub mod cli;
mod error;
pub mod exec;
pub mod io;
pub mod plan;
pub mod report;
pub mod run;

pub use error::Error;
