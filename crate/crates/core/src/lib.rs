//! Style/content disentanglement for speech-driven 3D facial motion.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod inference;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod probes;
pub mod synth;
pub mod tensor_io;
pub mod train;
pub mod wav;

pub use error::{Error, ParseError, Result};
