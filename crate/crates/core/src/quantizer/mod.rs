//! Frozen random-projection quantizer, trained VQ-VAE quantizers, and
//! codebook-utilization diagnostics.

mod file;
mod rpq;
mod utilization;
mod vqvae;

pub use file::{
    decode_quantizer, encode_quantizer, load_quantizer, save_quantizer, Quantizer, QUANTIZER_MAGIC, QUANTIZER_VERSION,
};
pub use rpq::{init_rpq, RandomProjectionQuantizer, RpqSpec, DEGENERATE_NORM};
pub use utilization::{utilization, UtilizationReport};
pub use vqvae::{
    train_vqvae, vqvae_quantize, TransformerShape, VqNet, VqParams, VqTrainReport, VqVaeConfig, VqVaeQuantizer,
    VqVariant,
};

use crate::data::FeatureSequence;
use crate::error::Result;

/// Anything that maps a stacked feature sequence to one discrete label per
/// frame. `None` marks a frame that could not be labeled.
pub trait SequenceLabeler {
    fn vocab_size(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn label_sequence(&self, stacked: &FeatureSequence) -> Result<Vec<Option<usize>>>;
}
