//! End-to-end runs: corpus splits, encoding, training, evaluation,
//! ablation and the files each run leaves behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{
    encode_records, generate_synthetic, read_corpus, write_corpus, Example, GenConfig, LabelVocabulary, Record,
    Vocabulary,
};
use crate::decoder::AttentionVariant;
use crate::metrics::EvalReport;
use crate::model::{save_model, Model, ModelMeta};
use crate::seeds::{derive_seed, STREAM_BATCH, STREAM_GENERATE, STREAM_INIT};
use crate::tensor::Real;
use crate::trainer::{evaluate, train, EpochRecord, TrainOutcome};
use crate::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
}

impl Splits {
    /// 80/10/10 split in corpus order.
    pub fn from_records(mut records: Vec<Record>) -> Self {
        let n = records.len();
        let n_train = n * 8 / 10;
        let n_dev = n / 10;
        let test = records.split_off(n_train + n_dev);
        let dev = records.split_off(n_train);
        Self {
            train: records,
            dev,
            test,
        }
    }

    pub fn parts(&self) -> [&[Record]; 3] {
        [&self.train, &self.dev, &self.test]
    }

    /// Reads `train.jsonl`, `dev.jsonl` and, if present, `test.jsonl`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| read_corpus(&dir.join(format!("{name}.jsonl")));
        let test_path = dir.join("test.jsonl");
        Ok(Self {
            train: read("train")?,
            dev: read("dev")?,
            test: if test_path.exists() { read("test")? } else { Vec::new() },
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, part) in SPLIT_NAMES.iter().zip(self.parts()) {
            write_corpus(&dir.join(format!("{name}.jsonl")), part)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub name: String,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub generator: GenConfig,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub topics: Vec<TopicEntry>,
}

/// Synthetic corpus for a root seed, split 80/10/10.
pub fn generate_corpus(gen: &GenConfig, seed: u64) -> Result<(Splits, Manifest)> {
    let corpus = generate_synthetic(gen, derive_seed(seed, STREAM_GENERATE))?;
    let splits = Splits::from_records(corpus.records());
    let manifest = Manifest {
        seed,
        generator: gen.clone(),
        train: splits.train.len(),
        dev: splits.dev.len(),
        test: splits.test.len(),
        topics: corpus
            .topic_names
            .iter()
            .zip(&corpus.phrases)
            .map(|(name, phrases)| TopicEntry {
                name: name.clone(),
                phrases: phrases.clone(),
            })
            .collect(),
    };
    Ok((splits, manifest))
}

/// Encoded splits with vocabularies built from the training split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub labels: LabelVocabulary,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn build(splits: &Splits, vocab_cap: usize, max_len: usize) -> Result<Self> {
        let vocab = Vocabulary::build(splits.train.iter().map(|r| r.text.as_str()), vocab_cap)?;
        let labels = LabelVocabulary::from_label_sets(splits.train.iter().map(|r| r.labels.as_slice()))?;
        Self::with_vocabularies(splits, vocab, labels, max_len)
    }

    /// Encodes `splits` with existing vocabularies, e.g. a trained model's.
    pub fn with_vocabularies(
        splits: &Splits,
        vocab: Vocabulary,
        labels: LabelVocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let enc = |part: &[Record]| encode_records(part, &vocab, &labels, max_len);
        let (train, dev, test) = (enc(&splits.train)?, enc(&splits.dev)?, enc(&splits.test)?);
        Ok(Self {
            vocab,
            labels,
            train,
            dev,
            test,
        })
    }
}

pub struct RunResult<F: Real> {
    pub model: Model<F>,
    pub meta: ModelMeta,
    pub outcome: TrainOutcome,
    /// Test-split report of the retained checkpoint, when a test split exists.
    pub test: Option<EvalReport>,
}

pub fn train_run<F: Real>(cfg: &RunConfig, data: &Dataset, on_epoch: impl FnMut(&EpochRecord)) -> Result<RunResult<F>> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(data.vocab.len(), data.labels.len());
    let mut model = Model::<F>::new(model_cfg.clone(), derive_seed(cfg.seed, STREAM_INIT))?;
    let outcome = train(
        &mut model,
        &cfg.train_config(),
        &data.train,
        &data.dev,
        derive_seed(cfg.seed, STREAM_BATCH),
        on_epoch,
    )?;
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &data.test, &cfg.bands)?)
    };
    Ok(RunResult {
        model,
        meta: ModelMeta {
            config: model_cfg,
            vocab: data.vocab.clone(),
            labels: data.labels.clone(),
        },
        outcome,
        test,
    })
}

pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";

pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes the resolved config, parameters, vocabularies, history and test
/// report of a finished run into `dir`.
pub fn write_run<F: Real>(dir: &Path, cfg: &RunConfig, run: &RunResult<F>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    save_model(dir, &run.meta, &run.model)?;
    write_json_lines(&dir.join(HISTORY_FILE), &run.outcome.history)?;
    if let Some(rep) = &run.test {
        write_json(&dir.join(REPORT_FILE), rep)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AttentionVariant,
    pub hl: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

/// Trains every variant in `variants` under `cfg` (data, seed and all
/// other settings shared) and reports test metrics for each.
pub fn ablate<F: Real>(
    cfg: &RunConfig,
    data: &Dataset,
    variants: &[AttentionVariant],
    mut on_run: impl FnMut(&RunConfig, &RunResult<F>) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    if data.test.is_empty() {
        return Err(Error::Config("ablation needs a test split".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let vcfg = RunConfig {
            attention_variant: variant,
            ..cfg.clone()
        };
        let run = train_run::<F>(&vcfg, data, |_| {})?;
        on_run(&vcfg, &run)?;
        let rep = run.test.as_ref().expect("test split present");
        log::info!("{variant}: test f1 {:.4}", rep.f1);
        rows.push(AblationRow {
            variant,
            hl: rep.hl,
            p: rep.p,
            r: rep.r,
            f1: rep.f1,
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | HL | P | R | F1 |\n|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.variant, r.hl, r.p, r.r, r.f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let gen = GenConfig {
            corpus_size: 100,
            ..GenConfig::default()
        };
        let (splits, manifest) = generate_corpus(&gen, 1).unwrap();
        assert_eq!((splits.train.len(), splits.dev.len(), splits.test.len()), (80, 10, 10));
        assert_eq!((manifest.train, manifest.dev, manifest.test), (80, 10, 10));
        assert_eq!(manifest.topics.len(), gen.topics);
        let odd = Splits::from_records(splits.train.clone()[..7].to_vec());
        assert_eq!((odd.train.len(), odd.dev.len(), odd.test.len()), (5, 0, 2));
    }

    #[test]
    fn table_has_one_row_per_variant() {
        let rows: Vec<AblationRow> = AttentionVariant::ALL
            .iter()
            .map(|&variant| AblationRow {
                variant,
                hl: 0.1,
                p: 0.5,
                r: 0.5,
                f1: 0.5,
            })
            .collect();
        let t = format_table(&rows);
        assert_eq!(t.lines().count(), 7);
        assert!(t.contains("| mdc_only | 0.1000 |"));
    }
}
