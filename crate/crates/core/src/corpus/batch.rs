use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Example, PAD};

/// Padded group of examples. Rows are padded with `PAD` past each true
/// length; label rows likewise past each label-sequence length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Vec<u32>>,
    pub label_lengths: Vec<usize>,
    /// Position of each row in the source example list.
    pub indices: Vec<usize>,
}

impl Batch {
    fn from_examples(examples: &[Example], indices: &[usize]) -> Self {
        let max_len = indices.iter().map(|&i| examples[i].tokens.len()).max().unwrap_or(0);
        let max_labels = indices.iter().map(|&i| examples[i].labels.len()).max().unwrap_or(0);
        let pad = |src: &[u32], width: usize| {
            let mut row = src.to_vec();
            row.resize(width, PAD);
            row
        };
        Self {
            tokens: indices.iter().map(|&i| pad(&examples[i].tokens, max_len)).collect(),
            lengths: indices.iter().map(|&i| examples[i].tokens.len()).collect(),
            labels: indices.iter().map(|&i| pad(&examples[i].labels, max_labels)).collect(),
            label_lengths: indices.iter().map(|&i| examples[i].labels.len()).collect(),
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Unpadded tokens and labels of row `b`.
    pub fn row(&self, b: usize) -> (&[u32], &[u32]) {
        (
            &self.tokens[b][..self.lengths[b]],
            &self.labels[b][..self.label_lengths[b]],
        )
    }

    /// Total label-sequence steps across the batch (including terminators).
    pub fn label_steps(&self) -> usize {
        self.label_lengths.iter().sum()
    }
}

/// Length-bucketed batches: examples are shuffled, stably sorted by length,
/// chunked, and the chunk order shuffled. Deterministic per seed.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64) -> Result<Vec<Batch>, CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::NoExamples);
    }
    if batch_size == 0 {
        return Err(CorpusError::BatchSize);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| examples[i].tokens.len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|idx| Batch::from_examples(examples, idx))
        .collect();
    batches.shuffle(&mut rng);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ex(len: usize, tag: u32) -> Example {
        Example {
            tokens: vec![5 + tag; len],
            labels: vec![tag % 3, 3],
        }
    }

    #[test]
    fn ceiling_division() {
        let xs: Vec<Example> = (0..130).map(|i| ex(1 + i % 17, i as u32)).collect();
        let batches = make_batches(&xs, 64, 1).unwrap();
        let mut sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 64, 64]);
    }

    #[test]
    fn deterministic_per_seed() {
        let xs: Vec<Example> = (0..50).map(|i| ex(1 + i % 7, i as u32)).collect();
        assert_eq!(make_batches(&xs, 8, 42).unwrap(), make_batches(&xs, 8, 42).unwrap());
        assert_ne!(make_batches(&xs, 8, 42).unwrap(), make_batches(&xs, 8, 43).unwrap());
    }

    #[test]
    fn similar_lengths_share_a_batch() {
        let xs = vec![ex(5, 0), ex(500, 1), ex(5, 2)];
        let batches = make_batches(&xs, 2, 0).unwrap();
        let pair = batches.iter().find(|b| b.len() == 2).unwrap();
        assert_eq!(pair.lengths, vec![5, 5]);
    }

    #[test]
    fn padding_only_past_true_length() {
        let xs = vec![ex(3, 0), ex(5, 1)];
        let b = &make_batches(&xs, 2, 0).unwrap()[0];
        for r in 0..2 {
            let (toks, labels) = b.row(r);
            assert!(toks.iter().all(|&t| t != PAD));
            assert!(b.tokens[r][toks.len()..].iter().all(|&t| t == PAD));
            assert_eq!(labels, xs[b.indices[r]].labels.as_slice());
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(make_batches(&[], 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn every_example_appears_once(lens in prop::collection::vec(1usize..40, 1..120), bs in 1usize..20, seed: u64) {
            let xs: Vec<Example> = lens.iter().enumerate().map(|(i, &l)| ex(l, i as u32)).collect();
            let batches = make_batches(&xs, bs, seed).unwrap();
            let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..xs.len()).collect::<Vec<_>>());
            for b in &batches {
                prop_assert!(b.len() <= bs);
                for r in 0..b.len() {
                    prop_assert_eq!(b.row(r).0, xs[b.indices[r]].tokens.as_slice());
                }
            }
        }
    }
}
