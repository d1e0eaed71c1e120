//! Quantizer files: a fixed 32-byte little-endian header followed by the
//! frozen matrices.
//!
//! ```text
//! 0  magic "BRQQ"       4  u16 version      6  u8 kind     7  u8 flags (bit 0: l2)
//! 8  u32 d              12 u32 h            16 u32 n       20 u32 reserved
//! 24 u64 seed
//! ```
//! Kind 0 stores `A` then `C` as f32; kind 1 stores nothing (rebuilt from
//! the seed); kinds 2 and 3 store a u32-length JSON config followed by every
//! VQ-VAE tensor as f32 in parameter order.

use std::path::Path;

use super::rpq::{RandomProjectionQuantizer, RpqSpec};
use super::vqvae::{VqVaeConfig, VqVaeQuantizer, VqVariant};
use super::SequenceLabeler;
use crate::data::FeatureSequence;
use crate::encoder::ParamTree;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const QUANTIZER_MAGIC: &[u8; 4] = b"BRQQ";
pub const QUANTIZER_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

const KIND_RPQ: u8 = 0;
const KIND_RPQ_SEED: u8 = 1;
const KIND_VQ_PROJECTION: u8 = 2;
const KIND_VQ_TRANSFORMER: u8 = 3;

/// Any frozen quantizer the pipeline can take targets from.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantizer {
    RandomProjection(RandomProjectionQuantizer),
    VqVae(VqVaeQuantizer),
}

impl Quantizer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Quantizer::RandomProjection(_) => "random_projection",
            Quantizer::VqVae(v) => match v.variant() {
                VqVariant::Projection => "projection_vqvae",
                VqVariant::Transformer => "transformer_vqvae",
            },
        }
    }

    pub fn quantize_sequence(&self, seq: &FeatureSequence) -> Result<Vec<usize>> {
        match self {
            Quantizer::RandomProjection(q) => q.quantize_sequence(seq),
            Quantizer::VqVae(q) => q.quantize_sequence(seq),
        }
    }
}

impl SequenceLabeler for Quantizer {
    fn vocab_size(&self) -> usize {
        match self {
            Quantizer::RandomProjection(q) => q.vocab_size(),
            Quantizer::VqVae(q) => q.vocab_size(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Quantizer::RandomProjection(q) => SequenceLabeler::input_dim(q),
            Quantizer::VqVae(q) => SequenceLabeler::input_dim(q),
        }
    }

    fn label_sequence(&self, stacked: &FeatureSequence) -> Result<Vec<Option<usize>>> {
        match self {
            Quantizer::RandomProjection(q) => q.label_sequence(stacked),
            Quantizer::VqVae(q) => q.label_sequence(stacked),
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `q`. `seed_only` drops the matrices of a random-projection
/// quantizer; it is ignored for VQ-VAEs.
pub fn encode_quantizer(q: &Quantizer, seed_only: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(QUANTIZER_MAGIC);
    out.extend_from_slice(&QUANTIZER_VERSION.to_le_bytes());
    let (kind, l2, d, h, n, seed) = match q {
        Quantizer::RandomProjection(r) => {
            let s = r.spec();
            let kind = if seed_only { KIND_RPQ_SEED } else { KIND_RPQ };
            (kind, s.l2_normalize, s.input_dim, s.code_dim, s.codebook_size, s.seed)
        }
        Quantizer::VqVae(v) => {
            let kind = match v.variant() {
                VqVariant::Projection => KIND_VQ_PROJECTION,
                VqVariant::Transformer => KIND_VQ_TRANSFORMER,
            };
            let c = v.config();
            (kind, c.l2_normalize, v.input_dim(), c.code_dim, c.codebook_size, v.seed())
        }
    };
    out.push(kind);
    out.push(u8::from(l2));
    for x in [d, h, n, 0] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out.extend_from_slice(&seed.to_le_bytes());
    match q {
        Quantizer::RandomProjection(r) => {
            if !seed_only {
                put_f32s(&mut out, r.projection());
                put_f32s(&mut out, r.codebook());
            }
        }
        Quantizer::VqVae(v) => {
            let json = serde_json::to_vec(v.config()).expect("config serializes");
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
            for t in v.params().slots() {
                put_f32s(&mut out, t);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedPayload {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data).map_err(|_| Error::Corrupt {
            path: self.path.to_path_buf(),
            reason: "non-finite quantizer weights".into(),
        })
    }
}

pub fn decode_quantizer(bytes: &[u8], path: &Path) -> Result<Quantizer> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != QUANTIZER_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != QUANTIZER_VERSION {
        return Err(Error::VersionMismatch {
            expected: QUANTIZER_VERSION as u32,
            found: version as u32,
        });
    }
    let kind = bytes[6];
    let l2 = match bytes[7] {
        0 => false,
        1 => true,
        f => return Err(malformed(format!("unknown flags {f:#x}"))),
    };
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (d, h, n) = (field(0), field(1), field(2));
    if d == 0 || h == 0 || n == 0 {
        return Err(malformed(format!("zero dimension d={d} h={h} n={n}")));
    }
    let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
        path,
    };
    let spec = RpqSpec {
        input_dim: d,
        code_dim: h,
        codebook_size: n,
        seed,
        l2_normalize: l2,
    };
    let q = match kind {
        KIND_RPQ => {
            let a = r.f32s(&[h, d])?;
            let c = r.f32s(&[n, h])?;
            Quantizer::RandomProjection(RandomProjectionQuantizer::from_matrices(spec, a, c)?)
        }
        KIND_RPQ_SEED => Quantizer::RandomProjection(RandomProjectionQuantizer::new(spec)?),
        KIND_VQ_PROJECTION | KIND_VQ_TRANSFORMER => {
            let variant = if kind == KIND_VQ_PROJECTION {
                VqVariant::Projection
            } else {
                VqVariant::Transformer
            };
            let len = r.u32()? as usize;
            let config: VqVaeConfig = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("vq-vae config: {e}"),
            })?;
            if config.code_dim != h || config.codebook_size != n || config.l2_normalize != l2 {
                return Err(malformed("header disagrees with embedded config".into()));
            }
            let mut failure = None;
            let params = VqVaeQuantizer::skeleton(variant, d, &config).map_ref(&mut |t| {
                r.f32s(t.shape()).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    Tensor::zeros(t.shape())
                })
            });
            if let Some(e) = failure {
                return Err(e);
            }
            Quantizer::VqVae(VqVaeQuantizer::from_parts(variant, d, config, seed, params)?)
        }
        k => return Err(malformed(format!("unknown quantizer kind {k}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(q)
}

pub fn save_quantizer(q: &Quantizer, path: impl AsRef<Path>, seed_only: bool) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_quantizer(q, seed_only)).map_err(|e| Error::io(path, e))
}

pub fn load_quantizer(path: impl AsRef<Path>) -> Result<Quantizer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_quantizer(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{init_rpq, train_vqvae, TransformerShape};

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn rpq_round_trips_both_ways() {
        let q = Quantizer::RandomProjection(init_rpq(8, 4, 16, 5).unwrap());
        for seed_only in [false, true] {
            let bytes = encode_quantizer(&q, seed_only);
            let back = decode_quantizer(&bytes, p()).unwrap();
            assert_eq!(back, q);
            assert_eq!(encode_quantizer(&back, seed_only), bytes);
        }
        assert_eq!(encode_quantizer(&q, true).len(), HEADER_LEN);
    }

    #[test]
    fn vqvae_round_trips() {
        let seqs: Vec<FeatureSequence> = (0..3)
            .map(|i| {
                FeatureSequence::new(
                    crate::rng::standard_normal(&mut crate::rng::rng(i, "s"), &[6, 4]),
                    40.0,
                )
                .unwrap()
            })
            .collect();
        let cfg = VqVaeConfig {
            code_dim: 3,
            codebook_size: 5,
            steps: 2,
            batch_size: 2,
            transformer: TransformerShape {
                num_layers: 1,
                d_model: 4,
                num_heads: 2,
                ffn_dim: 8,
            },
            ..VqVaeConfig::default()
        };
        for variant in [VqVariant::Projection, VqVariant::Transformer] {
            let (vq, _) = train_vqvae(variant, &seqs, &cfg, 1).unwrap();
            let q = Quantizer::VqVae(vq);
            let bytes = encode_quantizer(&q, false);
            assert_eq!(decode_quantizer(&bytes, p()).unwrap(), q);
        }
    }

    #[test]
    fn damaged_files() {
        let q = Quantizer::RandomProjection(init_rpq(8, 4, 16, 5).unwrap());
        let bytes = encode_quantizer(&q, false);
        assert!(matches!(
            decode_quantizer(&bytes[..bytes.len() - 3], p()),
            Err(Error::TruncatedPayload { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_quantizer(&bad, p()), Err(Error::MalformedHeader { .. })));
        let mut zero = bytes.clone();
        zero[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_quantizer(&zero, p()), Err(Error::MalformedHeader { .. })));
        let mut v = bytes;
        v[4] = 9;
        assert!(matches!(decode_quantizer(&v, p()), Err(Error::VersionMismatch { .. })));
    }
}
