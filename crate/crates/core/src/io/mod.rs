//! Problem input, benchmark generators, run reports and the command line.

pub mod cli;
pub mod generators;
pub mod matrix_market;
pub mod report;
