//! Ingestion of benchmark inputs and the append-only, checksummed event log
//! from which durable state is rebuilt after a restart.

mod ingest;
mod log;
mod state;

use thiserror::Error;

use crate::domain::{ModelId, PromptId};

pub use self::log::{
    encode_record, read_records, replay, replay_bytes, Corruption, LogEntry, LogRecord, ReplayMode, ReplayOutcome,
    ValidationRecord, VoteLog,
};
pub use ingest::{
    ingest_image_manifest, ingest_prompts, ingest_validation_pool, parse_manifest, parse_prompts,
    parse_validation_pool, ManifestEntry, ManifestReport, MissingCell, PromptFileEntry, ValidationPoolEntry,
};
pub use state::DurableState;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: prompt text is empty")]
    EmptyPrompt { line: usize },
    #[error("line {line}: duplicate prompt text{}", match first_line {
        Some(l) => format!(" (first seen on line {l})"),
        None => " (already registered)".to_string(),
    })]
    DuplicatePrompt { line: usize, first_line: Option<usize> },
    #[error("line {line}: unknown model {model_id}")]
    UnknownModel { line: usize, model_id: ModelId },
    #[error("line {line}: unknown prompt {prompt_id}")]
    UnknownPrompt { line: usize, prompt_id: PromptId },
    #[error("line {line}: replicate index {replicate_index} outside 1..={max}")]
    InvalidReplicate { line: usize, replicate_index: u32, max: u32 },
    #[error("line {line}: image already registered for this model, prompt and replicate")]
    DuplicateAsset { line: usize },
    #[error("line {line}: more than {expected} images for model {model_id} on prompt {prompt_id}")]
    ExcessReplicates {
        line: usize,
        model_id: ModelId,
        prompt_id: PromptId,
        expected: u32,
    },
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("checksum mismatch in record {seq} at byte {offset}")]
    ChecksumMismatch { seq: u64, offset: u64 },
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}
