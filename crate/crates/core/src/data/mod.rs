//! Feature ingestion, corpus normalization, frame stacking and the
//! synthetic corpus generator.

mod features;
mod io;
mod synth;

pub use features::{compute_stats, normalize, stack_frames, CorpusStats, FeatureSequence, DEFAULT_STRIDE_MS, STD_FLOOR};
pub use io::{
    decode_features, encode_features, read_corpus, read_features, read_features_dim, write_corpus, write_features,
    TranscriptLine, FEATURE_HEADER_LEN, FEATURE_MAGIC, TRANSCRIPT_INDEX,
};
pub use synth::{synth_corpus, SyntheticTask, SyntheticTaskSpec, Utterance};
