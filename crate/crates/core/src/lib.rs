//! Dynamic gap-safe screening inside variance-reduced stochastic proximal
//! solvers, with sequential, shared-memory and server/worker backends.

pub mod data;
pub mod dist;
pub mod error;
pub mod model;
pub mod problem;
pub mod screening;
pub mod shared;
pub mod solver;
pub mod speedup;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use problem::Problem;
