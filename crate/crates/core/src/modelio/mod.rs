//! Checkpoints, toy-model construction, tokenization and prompt files.

mod checkpoint;
mod prompts;
mod tokenizer;
mod toy;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION, MAGIC,
};
pub use prompts::{parse_prompts, read_prompts, PromptLineError, PromptRecord, PromptSet};
pub use tokenizer::{ByteTokenizer, Decoded, REPLACEMENT};
pub use toy::{make_redundant_model, make_toy_model, zero_attention_outputs};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {0}: {1}")]
    Read(String, #[source] std::io::Error),
    #[error("{0}")]
    Tokenizer(String),
}
