//! Joint multi-agent trajectory prediction with intention classification and
//! ethics-based risk assessment, trained on synthetic driving scenarios.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod intention;
pub mod interaction;
pub mod model;
pub mod nn;
pub mod probe;
pub mod risk;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
