//! Second-order Arnoldi eigensolver for quadratic eigenvalue problems
//! `(lambda^2 M + lambda C + K) x = 0`, with implicit restarts, refined
//! extraction, deflation repair and shift-invert.

pub mod dense;
pub mod driver;
pub mod error;
pub mod extraction;
pub mod io;
pub mod msoar;
pub mod operator;
#[cfg(feature = "verification")]
pub mod oracles;
pub mod restart;
pub mod sparse;

pub use faer::c64;
