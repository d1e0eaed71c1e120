//! Pre-norm transformer encoder with windowed attention, its vocabulary
//! head, and the masked-prediction loss.

mod config;
pub mod layers;
mod loss;
mod model;
mod probe;

pub use config::{ContextKind, ContextMode, EncoderConfig};
pub use layers::ParamTree;
pub use loss::{masked_ce_loss, MaskedLoss};
pub use model::{
    bind_params, forward, forward_batch, forward_tape, init_body, init_encoder, EncoderNet, EncoderParams,
};
pub(crate) use model::{check_inputs, split_rows};
pub use probe::{causality_probe, causality_probe_from};
