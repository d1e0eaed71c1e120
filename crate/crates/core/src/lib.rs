//! Self-supervised speech pre-training with a random-projection quantizer,
//! at desk scale.

pub mod data;
pub mod encoder;
pub mod latency;
pub mod error;
pub mod masking;
pub mod numerics;
pub mod quantizer;
pub mod rng;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
