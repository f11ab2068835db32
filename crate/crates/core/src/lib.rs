//! Probabilistic joint answer and proof prediction over small rule bases.

pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod pgm;
pub mod reasoner;
pub mod theory;

pub use error::{Error, Result};
