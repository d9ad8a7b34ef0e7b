use serde::{Deserialize, Serialize};

use super::{CorpusError, LabelVocabulary, Vocabulary};

/// An encoded document with its gold label sequence.
///
/// `labels` is sorted by label id (descending training frequency) and
/// terminated by the end-of-sequence label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub labels: Vec<u32>,
}

impl Example {
    /// Gold labels without the terminator.
    pub fn gold(&self) -> &[u32] {
        &self.labels[..self.labels.len().saturating_sub(1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    TooLong { len: usize },
    NoKnownLabels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodeOutcome {
    Example(Example),
    Skip(SkipReason),
}

pub fn encode_example(
    text: &str,
    labels: &[String],
    vocab: &Vocabulary,
    label_vocab: &LabelVocabulary,
    max_len: usize,
) -> Result<EncodeOutcome, CorpusError> {
    let tokens = vocab.encode(text);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    if tokens.len() > max_len {
        return Ok(EncodeOutcome::Skip(SkipReason::TooLong { len: tokens.len() }));
    }
    let mut ids: Vec<u32> = labels.iter().filter_map(|l| label_vocab.id(l)).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        log::warn!("skipping example with no known labels ({} given)", labels.len());
        return Ok(EncodeOutcome::Skip(SkipReason::NoKnownLabels));
    }
    ids.push(label_vocab.eos());
    Ok(EncodeOutcome::Example(Example { tokens, labels: ids }))
}
