//! Instrumented-textbook analytics: quiz content, book preprocessing,
//! telemetry wire types, and the statistics used to analyze reader answers.

pub mod book;
pub mod ctt;
pub mod dataset;
pub mod error;
pub mod intervention;
pub mod irt;
pub mod quiz;
pub mod sim;
pub mod stats;
pub mod synth;
pub mod telemetry;

pub use error::{Error, Result};
