//! Masked autoencoders for audio spectrograms.
pub mod attention;
pub mod augment;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod patches;
pub mod pipeline;
pub mod render;
pub use error::{Error, Result};
