//! Versioned checkpoint files.
//!
//! ```text
//! "BRQC" | u32 version | u64 config hash | u32 meta length | meta JSON
//!        | u64 tensor bytes | f32 tensors in parameter order | 32-byte SHA-256 of everything before it
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricsRow;
use crate::data::CorpusStats;
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams, ParamTree};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::quantizer::RpqSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BRQC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the pre-training targets came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QuantizerInfo {
    RandomProjection { spec: RpqSpec },
    VqVae { variant: String, codebook_size: usize, seed: u64 },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub params: EncoderParams<f32>,
    pub quantizer: QuantizerInfo,
    /// Feature normalization of the pre-training corpus, reused downstream.
    pub stats: Option<CorpusStats>,
    pub stack: usize,
    pub metrics: Option<MetricsRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    step: usize,
    encoder: EncoderConfig,
    quantizer: QuantizerInfo,
    stats: Option<CorpusStats>,
    stack: usize,
    metrics: Option<MetricsRow>,
}

/// First 8 bytes of SHA-256 over the canonical JSON of `cfg`.
pub fn config_hash(cfg: &EncoderConfig) -> u64 {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let meta = Meta {
        step: ckpt.step,
        encoder: ckpt.params.config.clone(),
        quantizer: ckpt.quantizer.clone(),
        stats: ckpt.stats.clone(),
        stack: ckpt.stack,
        metrics: ckpt.metrics.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&ckpt.version.to_le_bytes());
    out.extend_from_slice(&config_hash(&ckpt.params.config).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let tensors = ckpt.params.tensors();
    let bytes: usize = tensors.iter().map(|t| t.len() * 4).sum();
    out.extend_from_slice(&(bytes as u64).to_le_bytes());
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses a checkpoint. With `expected` set, the stored encoder config must
/// hash to the same value.
pub fn decode_checkpoint(bytes: &[u8], path: &Path, expected: Option<&EncoderConfig>) -> Result<Checkpoint> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 + 32 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing checkpoint header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let stored_hash = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let meta_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let meta_end = 20 + meta_len;
    if body.len() < meta_end + 8 {
        return Err(corrupt("metadata overruns file"));
    }
    let meta: Meta = serde_json::from_slice(&body[20..meta_end]).map_err(|e| corrupt(&format!("metadata: {e}")))?;
    if config_hash(&meta.encoder) != stored_hash {
        return Err(corrupt("stored config hash does not match metadata"));
    }
    if let Some(cfg) = expected {
        let want = config_hash(cfg);
        if want != stored_hash {
            return Err(Error::ConfigHashMismatch {
                expected: want,
                found: stored_hash,
            });
        }
    }
    let tensor_bytes = u64::from_le_bytes(body[meta_end..meta_end + 8].try_into().unwrap()) as usize;
    let payload = &body[meta_end + 8..];
    if payload.len() != tensor_bytes {
        return Err(corrupt("tensor payload length mismatch"));
    }
    let skeleton: EncoderParams<f32> = init_encoder(&meta.encoder)?;
    let needed: usize = skeleton.tensors().iter().map(|t| t.len() * 4).sum();
    if needed != tensor_bytes {
        return Err(corrupt("tensor payload does not fit the encoder config"));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let net = skeleton.net.map_ref(&mut |t: &Tensor<f32>| {
        let data: Vec<f32> = values.by_ref().take(t.len()).collect();
        Tensor::from_parts(t.shape().to_vec(), data)
    });
    let params = EncoderParams {
        config: meta.encoder,
        net,
    };
    if !params.all_finite() {
        return Err(corrupt("non-finite parameters"));
    }
    Ok(Checkpoint {
        version,
        step: meta.step,
        params,
        quantizer: meta.quantizer,
        stats: meta.stats,
        stack: meta.stack,
        metrics: meta.metrics,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&EncoderConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ContextMode;

    fn ckpt() -> Checkpoint {
        let cfg = EncoderConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            ffn_dim: 8,
            input_dim: 4,
            vocab_size: 6,
            context_mode: ContextMode::causal(Some(3)),
            seed: 1,
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: 12,
            params: init_encoder(&cfg).unwrap(),
            quantizer: QuantizerInfo::None,
            stats: Some(CorpusStats {
                mean: vec![0.5; 1],
                std: vec![2.0; 1],
            }),
            stack: 4,
            metrics: None,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c);
        let back = decode_checkpoint(&bytes, Path::new("m"), Some(&c.params.config)).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn distinct_failures() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c);
        let p = Path::new("m");
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 10], p, None),
            Err(Error::Corrupt { .. })
        ));
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped, p, None), Err(Error::Corrupt { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2, p, None), Err(Error::VersionMismatch { .. })));
        let other = EncoderConfig {
            d_model: 16,
            ..c.params.config.clone()
        };
        assert!(matches!(
            decode_checkpoint(&bytes, p, Some(&other)),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }
}
