//! Shock formation in the one-dimensional hyperbolic-parabolic chemotaxis
//! system.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod heat;
pub mod initial;
pub mod model;
pub mod modulation;
pub mod pipeline;
pub mod profile;
pub mod solver;
pub mod sweep;

pub use error::{Error, Result};
