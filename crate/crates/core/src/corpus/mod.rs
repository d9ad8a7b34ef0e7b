//! Corpus ingestion, vocabularies, label permutation, batching and the
//! synthetic planted-phrase generator.

mod batch;
mod example;
mod labels;
mod synthetic;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{make_batches, Batch};
pub use example::{encode_example, EncodeOutcome, Example, SkipReason};
pub use labels::LabelVocabulary;
pub use synthetic::{generate_synthetic, GenConfig, SyntheticCorpus};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, NUM, NUM_TOKEN, PAD, RESERVED, UNK, UNK_TOKEN};

/// Longest accepted document, in tokens.
pub const DEFAULT_MAX_LEN: usize = 500;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("vocabulary cap must be at least 6, got {0}")]
    VocabCap(usize),
    #[error("no training texts")]
    NoTexts,
    #[error("label set is empty")]
    NoLabels,
    #[error("label {0:?} has zero count")]
    ZeroCount(String),
    #[error("empty text after tokenization")]
    EmptyText,
    #[error("no examples to batch")]
    NoExamples,
    #[error("batch size must be positive")]
    BatchSize,
    #[error("generator: {0}")]
    Generator(String),
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub labels: Vec<String>,
}

pub fn read_corpus(path: &Path) -> Result<Vec<Record>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[Record]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Vocabularies plus encoded examples for one split. Overlong and
/// label-less records are dropped.
pub fn encode_records(
    records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelVocabulary,
    max_len: usize,
) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if let EncodeOutcome::Example(ex) = encode_example(&r.text, &r.labels, vocab, labels, max_len)? {
            out.push(ex);
        }
    }
    Ok(out)
}
