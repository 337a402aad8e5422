//! Builtin instances, convergence experiments and file formats.

mod experiment;
mod instances;
pub mod io;

pub use experiment::*;
pub use instances::*;
