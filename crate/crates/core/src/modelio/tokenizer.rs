use log::warn;

use super::IoError;
use crate::model::ModelConfig;

/// UTF-8 encoding of U+FFFD, emitted for ids that are neither bytes nor EOS.
pub const REPLACEMENT: &[u8] = "\u{FFFD}".as_bytes();

/// Byte-level tokenizer: token `i < 256` is byte `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTokenizer {
    eos: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub bytes: Vec<u8>,
    /// Ids that were replaced by [`REPLACEMENT`].
    pub replaced: usize,
}

impl Decoded {
    pub fn to_string_lossy(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

impl ByteTokenizer {
    pub fn new(eos: Option<u32>) -> Self {
        Self { eos }
    }

    pub fn for_model(config: &ModelConfig) -> Result<Self, IoError> {
        if config.vocab_size < 257 {
            return Err(IoError::Tokenizer(format!(
                "byte tokenizer needs vocab >= 257, model has {}",
                config.vocab_size
            )));
        }
        Ok(Self::new(config.eos_token))
    }

    pub fn eos(&self) -> Option<u32> {
        self.eos
    }

    pub fn tokenize(&self, text: &[u8]) -> Vec<u32> {
        text.iter().map(|&b| b as u32).collect()
    }

    /// Inverse of [`tokenize`](Self::tokenize). EOS ids are dropped.
    pub fn detokenize(&self, tokens: &[u32]) -> Decoded {
        let mut bytes = Vec::with_capacity(tokens.len());
        let mut replaced = 0;
        for &t in tokens {
            if Some(t) == self.eos {
                continue;
            }
            match u8::try_from(t) {
                Ok(b) => bytes.push(b),
                Err(_) => {
                    replaced += 1;
                    bytes.extend_from_slice(REPLACEMENT);
                }
            }
        }
        if replaced > 0 {
            warn!("detokenize: replaced {replaced} non-byte token ids");
        }
        Decoded { bytes, replaced }
    }
}
