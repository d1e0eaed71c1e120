//! Feature files and corpus directories.
//!
//! Feature file layout, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BRQF"
//! 4       2     version (1)
//! 6       1     precision in bits (32 or 64)
//! 7       1     reserved (0)
//! 8       4     T  (frames, u32)
//! 12      4     d  (dims, u32)
//! 16      4     frame stride in ms (f32)
//! 20      ...   T*d values, row-major
//! ```
//!
//! A corpus directory holds one `<id>.feat` per utterance plus
//! `transcripts.jsonl` with lines `{"id": ..., "tokens": [...]}`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::FeatureSequence;
use super::synth::Utterance;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"BRQF";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_LEN: usize = 20;
pub const TRANSCRIPT_INDEX: &str = "transcripts.jsonl";

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + seq.frames().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(32);
    out.push(0);
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&seq.frame_stride_ms().to_le_bytes());
    for v in seq.frames().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureSequence> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(malformed("file shorter than the 20-byte header"));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let bits = bytes[6];
    if bits != 32 && bits != 64 {
        return Err(malformed(&format!("unsupported precision {bits}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let t = u32_at(8);
    let d = u32_at(12);
    let stride = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if t == 0 {
        return Err(malformed("frame count is 0"));
    }
    if d == 0 {
        return Err(malformed("dimension is 0"));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(malformed("frame stride must be positive"));
    }
    let width = bits as usize / 8;
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| malformed("T*d overflows"))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after payload", payload.len() - expected),
        });
    }
    let data: Vec<f32> = if bits == 32 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect()
    };
    FeatureSequence::from_rows(t, d, data, stride)
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

/// Reads a feature file and checks its dimension.
pub fn read_features_dim(path: impl AsRef<Path>, expected_dim: usize) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let seq = read_features(path)?;
    if seq.dim() != expected_dim {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            expected: expected_dim,
            found: seq.dim(),
        });
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptLine {
    pub id: String,
    pub tokens: Vec<usize>,
}

pub fn write_corpus(dir: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index_path = dir.join(TRANSCRIPT_INDEX);
    let mut index = Vec::new();
    for u in utterances {
        write_features(&u.features, dir.join(format!("{}.feat", u.id)))?;
        let line = TranscriptLine {
            id: u.id.clone(),
            tokens: u.transcript.clone(),
        };
        serde_json::to_writer(&mut index, &line)?;
        index.push(b'\n');
    }
    let mut f = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    f.write_all(&index).map_err(|e| Error::io(&index_path, e))
}

/// Loads every utterance listed in the corpus index, in index order. All
/// feature files must share one dimension.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    let index_path = dir.join(TRANSCRIPT_INDEX);
    let f = fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut out: Vec<Utterance> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: index_path.clone(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        let feat_path = dir.join(format!("{}.feat", entry.id));
        let features = match out.first() {
            Some(first) => read_features_dim(&feat_path, first.features.dim())?,
            None => read_features(&feat_path)?,
        };
        out.push(Utterance {
            id: entry.id,
            features,
            transcript: entry.tokens,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSequence {
        FeatureSequence::from_rows(3, 2, vec![0.1, -2.5, 3.25, 1e-7, f32::MAX, -0.0], 10.0).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        let s = sample();
        write_features(&s, &p).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.frames().to_le_bytes(), s.frames().to_le_bytes());
        assert_eq!(back.frame_stride_ms(), 10.0);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = encode_features(&sample());
        let err = decode_features(&bytes[..bytes.len() - 3], Path::new("t.feat")).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { expected: 24, found: 21, .. }));
    }

    #[test]
    fn zero_dim_header_is_malformed() {
        let mut bytes = encode_features(&sample());
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_features(&bytes, Path::new("z.feat")),
            Err(Error::MalformedHeader { .. })
        ));
        let mut bad_magic = encode_features(&sample());
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_features(&bad_magic, Path::new("m.feat")),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn dim_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        write_features(&sample(), &p).unwrap();
        assert!(matches!(
            read_features_dim(&p, 3),
            Err(Error::DimMismatch { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn sixty_four_bit_payload_reads() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FEATURE_MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[64, 0]);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&10f32.to_le_bytes());
        bytes.extend_from_slice(&1.5f64.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f64).to_le_bytes());
        let s = decode_features(&bytes, Path::new("d.feat")).unwrap();
        assert_eq!(s.frame(0), &[1.5, -2.0]);
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::SyntheticTaskSpec::default();
        let utts = crate::data::synth_corpus(&spec, 4, 1).unwrap();
        write_corpus(dir.path(), &utts).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), utts);
    }
}
