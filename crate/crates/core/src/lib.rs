//! Finite-difference state solver and discrete optimal control for the
//! inverse one-phase Stefan problem.

pub mod cli;
pub mod control;
pub mod energy;
pub mod error;
pub mod functional;
pub mod grid;
pub mod optimize;
pub mod problem;
pub mod quadrature;
pub mod report;
pub mod state;
pub mod steklov;

pub use error::{Error, Result};
