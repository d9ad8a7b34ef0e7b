//! Planted-phrase corpus generator.
//!
//! Each topic has a few signature phrases. A document's label set is a
//! sampled topic subset; each active topic contributes one signature phrase,
//! verbatim and contiguous, surrounded by filler. With probability
//! `noise_rate` a filler slot holds a lone decoy token drawn from the phrase
//! vocabulary, so single words are weak evidence and only whole phrases
//! identify a topic. Topic marginals decay geometrically with the topic
//! index.
//!
//! With `shared_vocab = 0` every topic builds its phrases from a private
//! sub-vocabulary. Otherwise all phrases are drawn from one pool of
//! `shared_vocab` content words, so every word occurs under many topics and
//! only the ordered combination is diagnostic. Documents in which a
//! non-gold phrase appears by accident are resampled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Record};

const FILLER_WORDS: usize = 400;
const NUMBER_RATE: f64 = 0.02;
const LABEL_SET_WEIGHTS: [f64; 4] = [0.45, 0.3, 0.15, 0.1];
/// Weight multiplier for the paired topic (`t ^ 1`) of an already chosen one.
const PARTNER_BOOST: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub topics: usize,
    pub phrases_per_topic: usize,
    pub phrase_len_min: usize,
    pub phrase_len_max: usize,
    pub noise_rate: f64,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub corpus_size: usize,
    pub decay: f64,
    pub shared_vocab: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            phrases_per_topic: 3,
            phrase_len_min: 3,
            phrase_len_max: 5,
            noise_rate: 0.15,
            doc_len_min: 30,
            doc_len_max: 60,
            corpus_size: 2500,
            decay: 0.85,
            shared_vocab: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Generator(m.to_string()));
        if self.topics < 2 {
            return bad("at least 2 topics are required");
        }
        if self.phrase_len_min == 0 || self.phrase_len_min > self.phrase_len_max {
            return bad("phrase length range is empty");
        }
        if self.phrase_len_min < 3 {
            return bad("signature phrases need at least 3 tokens");
        }
        if self.phrases_per_topic == 0 || self.phrases_per_topic > 64 {
            return bad("phrases_per_topic must be in 1..=64");
        }
        if self.doc_len_min > self.doc_len_max {
            return bad("document length range is empty");
        }
        if self.doc_len_min < self.phrase_len_max {
            return bad("document length is shorter than the longest signature phrase");
        }
        if self.corpus_size == 0 {
            return bad("corpus_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must be in [0, 1]");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must be in (0, 1]");
        }
        if self.shared_vocab != 0 && self.shared_vocab < self.phrase_len_max {
            return bad("shared_vocab must be 0 or at least phrase_len_max");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CorpusError> {
        toml::from_str(s).map_err(|e| CorpusError::Generator(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    fn vocab_per_topic(&self) -> usize {
        (2 * self.phrase_len_max).max(6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub texts: Vec<String>,
    pub labels: Vec<Vec<String>>,
    pub topic_names: Vec<String>,
    /// Signature phrases per topic, tokens joined by spaces.
    pub phrases: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    pub fn records(&self) -> Vec<Record> {
        self.texts
            .iter()
            .zip(&self.labels)
            .map(|(t, l)| Record {
                text: t.clone(),
                labels: l.clone(),
            })
            .collect()
    }
}

fn topic_name(t: usize) -> String {
    format!("topic{t:02}")
}

fn topic_token(t: usize, j: usize) -> String {
    format!("t{t:02}x{j}")
}

fn shared_token(j: usize) -> String {
    format!("c{j}")
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

const MAX_RESAMPLES: usize = 1000;

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding fallthrough: last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = cfg.vocab_per_topic();

    let word = |t: usize, j: usize| {
        if cfg.shared_vocab > 0 {
            shared_token(j)
        } else {
            topic_token(t, j)
        }
    };
    let pool = if cfg.shared_vocab > 0 { cfg.shared_vocab } else { sub };

    let mut phrases: Vec<Vec<Vec<String>>> = Vec::with_capacity(cfg.topics);
    for t in 0..cfg.topics {
        let mut mine: Vec<Vec<String>> = Vec::new();
        let mut attempts = 0;
        while mine.len() < cfg.phrases_per_topic {
            attempts += 1;
            if attempts > MAX_RESAMPLES * cfg.phrases_per_topic {
                return Err(CorpusError::Generator(
                    "phrase vocabulary too small for distinct phrases".into(),
                ));
            }
            let len = rng.gen_range(cfg.phrase_len_min..=cfg.phrase_len_max);
            let p: Vec<String> = (0..len).map(|_| word(t, rng.gen_range(0..pool))).collect();
            let clash = mine.contains(&p)
                || phrases
                    .iter()
                    .flatten()
                    .any(|q| contains_run(q, &p) || contains_run(&p, q));
            if !clash {
                mine.push(p);
            }
        }
        phrases.push(mine);
    }

    let marginal: Vec<f64> = (0..cfg.topics).map(|t| cfg.decay.powi(t as i32)).collect();
    let mut texts = Vec::with_capacity(cfg.corpus_size);
    let mut labels = Vec::with_capacity(cfg.corpus_size);
    for _ in 0..cfg.corpus_size {
        let k = (weighted_pick(&mut rng, &LABEL_SET_WEIGHTS) + 1).min(cfg.topics);
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let w: Vec<f64> = (0..cfg.topics)
                .map(|t| {
                    if chosen.contains(&t) {
                        0.0
                    } else if chosen.contains(&(t ^ 1)) {
                        marginal[t] * PARTNER_BOOST
                    } else {
                        marginal[t]
                    }
                })
                .collect();
            chosen.push(weighted_pick(&mut rng, &w));
        }

        let mut resamples = 0;
        let doc = loop {
            let mut planted: Vec<&Vec<String>> = chosen
                .iter()
                .map(|&t| &phrases[t][rng.gen_range(0..cfg.phrases_per_topic)])
                .collect();
            planted.shuffle(&mut rng);
            let phrase_tokens: usize = planted.iter().map(|p| p.len()).sum();
            let doc_len = rng.gen_range(cfg.doc_len_min..=cfg.doc_len_max).max(phrase_tokens);
            let fillers = doc_len - phrase_tokens;
            let mut cuts: Vec<usize> = (0..planted.len()).map(|_| rng.gen_range(0..=fillers)).collect();
            cuts.sort_unstable();

            let mut doc: Vec<String> = Vec::with_capacity(doc_len);
            let mut last_decoy = false;
            let mut next = 0;
            for slot in 0..=fillers {
                while next < planted.len() && cuts[next] == slot {
                    doc.extend(planted[next].iter().cloned());
                    last_decoy = false;
                    next += 1;
                }
                if slot == fillers {
                    break;
                }
                if !last_decoy && rng.gen::<f64>() < cfg.noise_rate {
                    let t = rng.gen_range(0..cfg.topics);
                    doc.push(word(t, rng.gen_range(0..pool)));
                    last_decoy = true;
                } else if rng.gen::<f64>() < NUMBER_RATE {
                    doc.push(rng.gen_range(1000..2100).to_string());
                    last_decoy = false;
                } else {
                    doc.push(format!("w{}", rng.gen_range(0..FILLER_WORDS)));
                    last_decoy = false;
                }
            }
            let stray = (0..cfg.topics)
                .filter(|t| !chosen.contains(t))
                .any(|t| phrases[t].iter().any(|p| contains_run(&doc, p)));
            if !stray {
                break doc;
            }
            resamples += 1;
            if resamples > MAX_RESAMPLES {
                return Err(CorpusError::Generator(
                    "cannot avoid stray phrases; lower noise_rate".into(),
                ));
            }
        };
        texts.push(doc.join(" "));
        let mut names: Vec<String> = chosen.iter().map(|&t| topic_name(t)).collect();
        names.sort();
        labels.push(names);
    }

    Ok(SyntheticCorpus {
        texts,
        labels,
        topic_names: (0..cfg.topics).map(topic_name).collect(),
        phrases: phrases
            .into_iter()
            .map(|ps| ps.into_iter().map(|p| p.join(" ")).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            corpus_size: 200,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(), 9).unwrap();
        let b = generate_synthetic(&small(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), 10).unwrap();
        assert_ne!(a.texts, c.texts);
    }

    fn check_planted(cfg: &GenConfig, seed: u64) {
        let corpus = generate_synthetic(cfg, seed).unwrap();
        for (text, labels) in corpus.texts.iter().zip(&corpus.labels) {
            let padded = format!(" {text} ");
            assert!((1..=4).contains(&labels.len()));
            for l in labels {
                let t = corpus.topic_names.iter().position(|n| n == l).unwrap();
                assert!(
                    corpus.phrases[t].iter().any(|p| padded.contains(&format!(" {p} "))),
                    "{l} missing in {text}"
                );
            }
            // no phrase of a non-gold topic appears
            for (t, ps) in corpus.phrases.iter().enumerate() {
                if !labels.contains(&corpus.topic_names[t]) {
                    assert!(ps.iter().all(|p| !padded.contains(&format!(" {p} "))));
                }
            }
        }
    }

    #[test]
    fn every_gold_label_has_its_phrase_verbatim() {
        check_planted(&small(), 3);
    }

    #[test]
    fn shared_pool_phrases_stay_exclusive() {
        let cfg = GenConfig {
            shared_vocab: 40,
            ..small()
        };
        check_planted(&cfg, 4);
        let corpus = generate_synthetic(&cfg, 4).unwrap();
        let words: std::collections::HashSet<&str> =
            corpus.phrases.iter().flatten().flat_map(|p| p.split(' ')).collect();
        assert!(words.iter().all(|w| w.starts_with('c')));
        assert!(words.len() <= 40);
        let mut bad = cfg.clone();
        bad.shared_vocab = 2;
        assert!(generate_synthetic(&bad, 0).is_err());
    }

    #[test]
    fn long_tailed_topic_frequencies() {
        let cfg = GenConfig {
            topics: 20,
            decay: 0.7,
            corpus_size: 2000,
            ..GenConfig::default()
        };
        let corpus = generate_synthetic(&cfg, 1).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ls in &corpus.labels {
            for l in ls {
                *counts.entry(l.as_str()).or_default() += 1;
            }
        }
        let max = counts.values().max().copied().unwrap();
        let min = counts.values().min().copied().unwrap();
        assert!(max >= 5 * min, "max {max} min {min}");
    }

    #[test]
    fn config_errors() {
        let mut cfg = small();
        cfg.topics = 1;
        assert!(generate_synthetic(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.doc_len_min = 4;
        cfg.phrase_len_max = 5;
        assert!(generate_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn config_keys_are_exact() {
        let text = small().to_toml_string();
        for key in [
            "topics",
            "phrases_per_topic",
            "phrase_len_min",
            "phrase_len_max",
            "noise_rate",
            "doc_len_min",
            "doc_len_max",
            "corpus_size",
            "decay",
            "shared_vocab",
        ] {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
        assert_eq!(GenConfig::from_toml_str(&text).unwrap(), small());
        assert!(GenConfig::from_toml_str(&format!("{text}\ntopicz = 3\n")).is_err());
    }
}
