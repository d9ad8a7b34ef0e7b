use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Labels ordered by descending training frequency. Id `len()` is the
/// end-of-sequence label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, usize)>", into = "Vec<(String, usize)>")]
pub struct LabelVocabulary {
    labels: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, u32>,
}

impl LabelVocabulary {
    /// Orders labels by non-increasing count, ties ascending lexicographic.
    pub fn permute_labels<I, S>(counts: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, usize> = BTreeMap::new();
        for (label, c) in counts {
            *merged.entry(label.into()).or_default() += c;
        }
        if merged.is_empty() {
            return Err(CorpusError::NoLabels);
        }
        if let Some((l, _)) = merged.iter().find(|(_, &c)| c == 0) {
            return Err(CorpusError::ZeroCount(l.clone()));
        }
        let mut ranked: Vec<(String, usize)> = merged.into_iter().collect();
        // stable sort on a lexicographically ordered input keeps ties ascending
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        Ok(Self::from_ranked(ranked))
    }

    /// Counts label occurrences over training label sets, then permutes.
    pub fn from_label_sets<'a, I>(sets: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for set in sets {
            let mut seen: Vec<&str> = set.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for l in seen {
                *counts.entry(l).or_default() += 1;
            }
        }
        Self::permute_labels(counts)
    }

    fn from_ranked(ranked: Vec<(String, usize)>) -> Self {
        let index = ranked
            .iter()
            .enumerate()
            .map(|(i, (l, _))| (l.clone(), i as u32))
            .collect();
        let (labels, counts) = ranked.into_iter().unzip();
        Self { labels, counts, index }
    }

    /// Number of real labels (excluding end-of-sequence).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn eos(&self) -> u32 {
        self.labels.len() as u32
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> usize {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

impl TryFrom<Vec<(String, usize)>> for LabelVocabulary {
    type Error = String;

    fn try_from(ranked: Vec<(String, usize)>) -> Result<Self, String> {
        if ranked.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err("label counts must be non-increasing".into());
        }
        let v = Self::from_ranked(ranked);
        if v.index.len() != v.labels.len() {
            return Err("duplicate labels".into());
        }
        Ok(v)
    }
}

impl From<LabelVocabulary> for Vec<(String, usize)> {
    fn from(v: LabelVocabulary) -> Self {
        v.labels.into_iter().zip(v.counts).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descending_frequency_with_lexicographic_ties() {
        let v = LabelVocabulary::permute_labels([("sports", 9), ("youth", 5), ("art", 5)]).unwrap();
        assert_eq!(v.labels(), ["sports", "art", "youth"]);
        assert_eq!(v.eos(), 3);
        assert_eq!(v.counts(), [9, 5, 5]);
    }

    #[test]
    fn singleton() {
        let v = LabelVocabulary::permute_labels([("a", 3)]).unwrap();
        assert_eq!(v.labels(), ["a"]);
        assert_eq!(v.eos(), 1);
    }

    #[test]
    fn full_tie_is_lexicographic() {
        let v = LabelVocabulary::permute_labels([("d", 2), ("b", 2), ("c", 2), ("a", 2)]).unwrap();
        assert_eq!(v.labels(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn errors() {
        let empty: [(&str, usize); 0] = [];
        assert!(matches!(
            LabelVocabulary::permute_labels(empty),
            Err(CorpusError::NoLabels)
        ));
        assert!(matches!(
            LabelVocabulary::permute_labels([("a", 0)]),
            Err(CorpusError::ZeroCount(_))
        ));
    }

    #[test]
    fn counts_are_exact_training_counts() {
        let sets = [
            vec!["x".to_string(), "y".to_string()],
            vec!["y".to_string()],
            vec!["y".to_string(), "y".to_string(), "z".to_string()],
        ];
        let v = LabelVocabulary::from_label_sets(sets.iter().map(|s| s.as_slice())).unwrap();
        assert_eq!(v.labels(), ["y", "x", "z"]);
        assert_eq!(v.counts(), [3, 1, 1]);
    }
}
