use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;

/// One line of a prompt file: `{"id": ..., "text": ..., "max_new_tokens"?: ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for PromptLineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSet {
    pub records: Vec<PromptRecord>,
    pub errors: Vec<PromptLineError>,
}

pub fn read_prompts(path: &Path) -> Result<PromptSet, IoError> {
    let file = File::open(path).map_err(|e| IoError::Read(path.display().to_string(), e))?;
    parse_prompts(BufReader::new(file)).map_err(|e| IoError::Read(path.display().to_string(), e))
}

/// Parses JSONL in order. Blank lines are skipped; bad lines become errors.
pub fn parse_prompts(reader: impl BufRead) -> std::io::Result<PromptSet> {
    let mut set = PromptSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        match serde_json::from_str::<PromptRecord>(&line) {
            Ok(rec) if rec.text.is_empty() => set.errors.push(PromptLineError {
                line: lineno,
                message: "empty \"text\"".into(),
            }),
            Ok(rec) => set.records.push(rec),
            Err(e) => set.errors.push(PromptLineError { line: lineno, message: e.to_string() }),
        }
    }
    Ok(set)
}
