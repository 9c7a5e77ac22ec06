//! Binary checkpoint format, version 1. All integers and floats little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ASDM"
//! 4       4     u32 format version (1)
//! 8       4     u32 num_layers
//! 12      4     u32 hidden_size
//! 16      4     u32 num_heads
//! 20      4     u32 mlp_dim
//! 24      4     u32 vocab_size
//! 28      4     u32 max_seq_len
//! 32      4     f32 norm_eps
//! 36      4     f32 rope_theta
//! 40      4     u32 eos_token (0xFFFF_FFFF = none)
//! 44      4     u32 tensor count N
//! 48      ...   N table entries:
//!                 u16 name length, name bytes (UTF-8),
//!                 u32 rows, u32 cols, u64 absolute byte offset of the data
//! ...           tensor data, f32, in table order, contiguous
//! ```
//!
//! Tensor names and order follow [`Weights::expected_shapes`]; vectors are
//! stored as `1 x H`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModelConfig, ModelError, Weights};

pub const MAGIC: [u8; 4] = *b"ASDM";
pub const FORMAT_VERSION: u32 = 1;
const NO_EOS: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated: need {needed} bytes, have {len}")]
    Truncated { needed: u64, len: u64 },
    #[error("tensor {name}: shape {got:?} inconsistent with config (expected {want:?})")]
    ShapeMismatch {
        name: String,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("malformed tensor table: {0}")]
    Layout(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
}

pub fn save_checkpoint(weights: &Weights, config: &ModelConfig, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(weights, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Weights, ModelConfig), CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn encode_checkpoint(weights: &Weights, config: &ModelConfig) -> Result<Vec<u8>, CheckpointError> {
    config.validate()?;
    weights.validate(config)?;
    let names = Weights::expected_shapes(config);
    let tensors = weights.tensors();

    let table_len: usize = names.iter().map(|(n, _)| 2 + n.len() + 16).sum();
    let mut offset = (48 + table_len) as u64;
    let mut out = Vec::with_capacity(offset as usize + tensors.iter().map(|(d, _)| d.len() * 4).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    for v in [
        FORMAT_VERSION,
        config.num_layers as u32,
        config.hidden_size as u32,
        config.num_heads as u32,
        config.mlp_dim as u32,
        config.vocab_size as u32,
        config.max_seq_len as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&config.norm_eps.to_le_bytes());
    out.extend_from_slice(&config.rope_theta.to_le_bytes());
    out.extend_from_slice(&config.eos_token.unwrap_or(NO_EOS).to_le_bytes());
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for ((name, _), (data, (rows, cols))) in names.iter().zip(&tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(*rows as u32).to_le_bytes());
        out.extend_from_slice(&(*cols as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += data.len() as u64 * 4;
    }
    for (data, _) in &tensors {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len() as u64, offset);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated { needed: end as u64, len: self.buf.len() as u64 });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(Weights, ModelConfig), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let norm_eps = r.f32()?;
    let rope_theta = r.f32()?;
    let eos = r.u32()?;
    let config = ModelConfig {
        num_layers: dims[0],
        hidden_size: dims[1],
        num_heads: dims[2],
        mlp_dim: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        norm_eps,
        rope_theta,
        eos_token: (eos != NO_EOS).then_some(eos),
    };
    config.validate()?;

    let expected = Weights::expected_shapes(&config);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::Layout(format!(
            "{count} tensors listed, config requires {}",
            expected.len()
        )));
    }
    let mut spans: Vec<Range<u64>> = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Layout("tensor name is not UTF-8".into()))?;
        if &name != want_name {
            return Err(CheckpointError::Layout(format!("found tensor {name}, expected {want_name}")));
        }
        let got = (r.u32()? as usize, r.u32()? as usize);
        if got != *want_shape {
            return Err(CheckpointError::ShapeMismatch { name, got, want: *want_shape });
        }
        let start = r.u64()?;
        spans.push(start..start + (got.0 * got.1) as u64 * 4);
    }

    let header_end = r.pos as u64;
    let len = buf.len() as u64;
    let mut sorted = spans.clone();
    sorted.sort_by_key(|s| s.start);
    let mut prev_end = header_end;
    for s in &sorted {
        if s.start < prev_end {
            return Err(CheckpointError::Layout(format!("tensor data at {} overlaps earlier data", s.start)));
        }
        prev_end = s.end;
    }
    if prev_end > len {
        return Err(CheckpointError::Truncated { needed: prev_end, len });
    }

    let tensors = spans
        .iter()
        .map(|s| {
            buf[s.start as usize..s.end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    let weights = Weights::from_tensors(&config, tensors)?;
    Ok((weights, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::make_toy_model;

    fn small() -> ModelConfig {
        ModelConfig { num_layers: 2, hidden_size: 8, num_heads: 2, mlp_dim: 12, vocab_size: 20, max_seq_len: 16, eos_token: Some(3), ..ModelConfig::default() }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = small();
        let w = make_toy_model(&cfg, 5);
        let bytes = encode_checkpoint(&w, &cfg).unwrap();
        let (w2, cfg2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        for ((a, _), (b, _)) in w.tensors().into_iter().zip(w2.tensors()) {
            let (a, b): (Vec<u32>, Vec<u32>) = (a.iter().map(|v| v.to_bits()).collect(), b.iter().map(|v| v.to_bits()).collect());
            assert_eq!(a, b);
        }
        assert_eq!(encode_checkpoint(&w2, &cfg2).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let cfg = small();
        let mut bytes = encode_checkpoint(&make_toy_model(&cfg, 1), &cfg).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Version { found: 9, .. })));
    }

    #[test]
    fn truncated_mid_tensor() {
        let cfg = small();
        let bytes = encode_checkpoint(&make_toy_model(&cfg, 1), &cfg).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(decode_checkpoint(cut), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..30]), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn vocab_disagreeing_with_lm_head_is_a_shape_error() {
        let cfg = small();
        let mut bytes = encode_checkpoint(&make_toy_model(&cfg, 1), &cfg).unwrap();
        // bump vocab_size in the header; the embedding table entry no longer matches
        bytes[24..28].copy_from_slice(&21u32.to_le_bytes());
        match decode_checkpoint(&bytes) {
            Err(CheckpointError::ShapeMismatch { name, got, want }) => {
                assert_eq!(name, "tok_embed");
                assert_eq!(got, (20, 8));
                assert_eq!(want, (21, 8));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let cfg = small();
        let mut bytes = encode_checkpoint(&make_toy_model(&cfg, 1), &cfg).unwrap();
        // first table entry: u16 len + "tok_embed" + rows + cols, then offset
        let off_pos = 48 + 2 + "tok_embed".len() + 8;
        let second_off_pos = off_pos + 8 + 2 + "layers.0.attn_norm".len() + 8;
        let first = bytes[off_pos..off_pos + 8].to_vec();
        bytes[second_off_pos..second_off_pos + 8].copy_from_slice(&first);
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Layout(_))));
    }

    #[test]
    fn file_round_trip() {
        let cfg = small();
        let w = make_toy_model(&cfg, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.asdm");
        save_checkpoint(&w, &cfg, &path).unwrap();
        let (w2, cfg2) = load_checkpoint(&path).unwrap();
        assert_eq!((w, cfg), (w2, cfg2));
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(CheckpointError::Io(_))));
    }
}
