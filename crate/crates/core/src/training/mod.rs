//! Pre-training, CTC fine-tuning, checkpoints and run logs.

mod checkpoint;
mod ctc;
mod direct_asr;
mod finetune;
mod metrics;
mod pretrain;
mod scaling;

pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, QuantizerInfo,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use ctc::{ctc_loss, edit_distance, greedy_ctc_decode, min_frames, token_error_rate, CtcLoss};
pub use direct_asr::{direct_asr_probe, DirectAsrConfig, ProbeNet, ProbeOutcome};
pub use finetune::{run_finetune, CtcNet, FinetuneConfig, FinetuneInit, FinetuneModel, FinetuneOutcome};
pub use metrics::{CsvLog, MetricsRow, METRICS_HEADER, TIMING_HEADER};
pub use pretrain::{
    checkpoint_path, composed_loss, composed_loss_grad_check, evaluate_masked, data_subset, make_batch_item, normalize_all, pretrain_step, run_pretrain,
    sample_batch, BatchItem, MaskConfig, MaskedEval, PretrainConfig, PretrainData, PretrainOutcome, PretrainState,
    QuantizerConfig,
};
pub use scaling::{
    data_scaling_experiment, fit_vqvae_targets, scaling_csv, stacked_subset, ter_gaps, ScalingConfig, ScalingRow,
    SCALING_HEADER,
};
