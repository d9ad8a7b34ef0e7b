//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{parse_csv, Preset, RunConfig};
use crate::corpus::{read_corpus, GenConfig, DEFAULT_MAX_LEN};
use crate::decoder::AttentionVariant;
use crate::metrics::EvalReport;
use crate::model::{load_model, Model, ModelMeta};
use crate::pipeline::{
    ablate, format_table, generate_corpus, train_run, write_json, write_run, AblationRow, Dataset, Splits, CONFIG_FILE,
};
use crate::tensor::{Precision, Real};
use crate::trainer::evaluate;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "semunit",
    version,
    about = "Multi-label text classification with semantic-unit attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-phrase corpus (train/dev/test + manifest).
    Gencorpus(GenArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a trained model on a corpus file.
    Eval(EvalArgs),
    /// Train all five attention variants and tabulate test metrics.
    Ablate(TrainArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator settings (TOML); may also carry `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML), layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus directory with train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// desk or paper; ignored when --config names its own preset.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub variant: Option<AttentionVariant>,
    /// Comma-separated dilation rates, e.g. 1,2,3.
    #[arg(long)]
    pub dilation_rates: Option<String>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Replace the dilated convolution with a hierarchical encoder over
    /// segments of this many words.
    #[arg(long)]
    pub hier: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, action = clap::ArgAction::Set)]
    pub mask_emitted: Option<bool>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Comma-separated band cut-offs for the test report.
    #[arg(long)]
    pub bands: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation settings (TOML) as written by a previous eval.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint file or run directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus file (JSON lines).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub bands: Option<String>,
}

/// Resolved evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub bands: Vec<usize>,
}

pub const GENCORPUS_CONFIG: &str = "gencorpus.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_CONFIG: &str = "eval.toml";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TABLE: &str = "ablation.md";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gencorpus(a) => cmd_gencorpus(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

pub fn cmd_gencorpus(a: &GenArgs) -> Result<()> {
    let (mut gen, mut seed) = (GenConfig::default(), 1);
    if let Some(path) = &a.config {
        let mut table: toml::Table = toml::from_str(&fs::read_to_string(path)?).map_err(config_err)?;
        if let Some(s) = table.remove("seed") {
            seed = s
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .ok_or_else(|| Error::Config("seed must be a non-negative integer".into()))?;
        }
        let mut merged = toml::Table::try_from(&gen).map_err(config_err)?;
        merged.extend(table);
        gen = merged.try_into().map_err(config_err)?;
    }
    if let Some(s) = a.seed {
        seed = s;
    }
    gen.validate()?;
    let (splits, manifest) = generate_corpus(&gen, seed)?;
    splits.write_dir(&a.out)?;
    write_json(&a.out.join(MANIFEST_FILE), &manifest)?;
    fs::write(
        a.out.join(GENCORPUS_CONFIG),
        format!("seed = {seed}\n{}", gen.to_toml_string()),
    )?;
    println!(
        "wrote {} train / {} dev / {} test documents over {} topics to {}",
        manifest.train,
        manifest.dev,
        manifest.test,
        manifest.topics.len(),
        a.out.display()
    );
    Ok(())
}

/// Config file (or preset) with command-line overrides applied, validated.
pub fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(a.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(v) = a.variant {
        cfg.attention_variant = v;
    }
    if let Some(r) = &a.dilation_rates {
        cfg.dilation_rates = parse_csv(r)?;
    }
    if let Some(k) = a.kernel_size {
        cfg.kernel_size = k;
    }
    if let Some(h) = a.hier {
        cfg.hier = Some(h);
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(m) = a.mask_emitted {
        cfg.mask_emitted = m;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    if let Some(b) = &a.bands {
        cfg.bands = parse_csv(b)?;
    }
    cfg.validate()?;
    if cfg.data_dir.is_none() {
        return Err(Error::Config("no corpus: pass --data or set data_dir".into()));
    }
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir.as_deref().expect("validated");
    Dataset::build(&Splits::read_dir(dir)?, cfg.vocab_cap, cfg.max_len)
}

fn train_into<F: Real>(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<()> {
    let run = train_run::<F>(cfg, data, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  lr {:.3e}  dev HL {:.4} P {:.4} R {:.4} F1 {:.4}",
            r.epoch, r.loss, r.lr, r.dev_hl, r.dev_p, r.dev_r, r.dev_f1
        )
    })?;
    write_run(out, cfg, &run)?;
    println!(
        "best epoch {} (dev F1 {:.4}); artifacts in {}",
        run.outcome.best_epoch,
        run.outcome.best_dev_f1,
        out.display()
    );
    if let Some(rep) = &run.test {
        print_report("test", rep);
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_run_config(a)?;
    log::info!("schedule {}", cfg.schedule()?);
    let data = load_dataset(&cfg)?;
    match cfg.precision {
        Precision::F32 => train_into::<f32>(&cfg, &data, &a.out),
        Precision::F64 => train_into::<f64>(&cfg, &data, &a.out),
    }
}

fn ablate_into<F: Real>(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<()> {
    let mut done = Vec::new();
    let rows = ablate::<F>(cfg, data, &AttentionVariant::ALL, |vcfg, run| {
        write_run(&out.join(vcfg.attention_variant.name()), vcfg, run)?;
        let rep = run.test.as_ref().expect("test split");
        done.push(AblationRow {
            variant: vcfg.attention_variant,
            hl: rep.hl,
            p: rep.p,
            r: rep.r,
            f1: rep.f1,
        });
        write_json(&out.join(ABLATION_JSON), &done)
    })?;
    let table = format_table(&rows);
    fs::write(out.join(ABLATION_TABLE), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_ablate(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_run_config(a)?;
    let data = load_dataset(&cfg)?;
    if data.test.is_empty() {
        return Err(Error::Config(
            "ablation needs test.jsonl in the corpus directory".into(),
        ));
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(CONFIG_FILE), cfg.to_toml_string())?;
    match cfg.precision {
        Precision::F32 => ablate_into::<f32>(&cfg, &data, &a.out),
        Precision::F64 => ablate_into::<f64>(&cfg, &data, &a.out),
    }
}

pub fn resolve_eval_config(a: &EvalArgs) -> Result<EvalConfig> {
    let file: Option<EvalConfig> = match &a.config {
        Some(p) => Some(toml::from_str(&fs::read_to_string(p)?).map_err(config_err)?),
        None => None,
    };
    let checkpoint = a
        .checkpoint
        .clone()
        .or_else(|| file.as_ref().map(|f| f.checkpoint.clone()))
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let data = a
        .data
        .clone()
        .or_else(|| file.as_ref().map(|f| f.data.clone()))
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let bands = match &a.bands {
        Some(b) => parse_csv(b)?,
        None => file.as_ref().map(|f| f.bands.clone()).unwrap_or_default(),
    };
    let seed = a.seed.or(file.as_ref().map(|f| f.seed)).unwrap_or(1);
    for p in [&checkpoint, &data] {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
    }
    Ok(EvalConfig {
        seed,
        checkpoint,
        data,
        bands,
    })
}

fn eval_with<F: Real>(meta: &ModelMeta, model: &Model<F>, cfg: &EvalConfig) -> Result<EvalReport> {
    let records = read_corpus(&cfg.data)?;
    let unknown: std::collections::BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.labels.iter().map(String::as_str))
        .filter(|l| meta.labels.id(l).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Model(format!(
            "label vocabulary mismatch: corpus labels {unknown:?} are unknown to the checkpoint"
        )));
    }
    let splits = Splits {
        test: records,
        ..Splits::default()
    };
    let data = Dataset::with_vocabularies(&splits, meta.vocab.clone(), meta.labels.clone(), DEFAULT_MAX_LEN)?;
    if data.test.is_empty() {
        return Err(Error::Config(format!("no usable documents in {}", cfg.data.display())));
    }
    evaluate(model, &data.test, &cfg.bands)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let cfg = resolve_eval_config(a)?;
    let (meta, model, precision) = load_model::<f64>(&cfg.checkpoint)?;
    let report = match precision {
        Precision::F32 => eval_with(&meta, &model.cast::<f32>(), &cfg)?,
        Precision::F64 => eval_with(&meta, &model, &cfg)?,
    };
    let out = match &a.out {
        Some(o) => o.clone(),
        None if cfg.checkpoint.is_dir() => cfg.checkpoint.clone(),
        None => cfg.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out)?;
    fs::write(out.join(EVAL_CONFIG), toml::to_string(&cfg).map_err(config_err)?)?;
    write_json(&out.join(EVAL_REPORT), &report)?;
    print_report("eval", &report);
    Ok(report)
}

fn print_report(tag: &str, r: &EvalReport) {
    let mut line = format!("{tag}: HL {:.4}  P {:.4}  R {:.4}  F1 {:.4}", r.hl, r.p, r.r, r.f1);
    for (k, v) in &r.bands {
        line.push_str(&format!("  band_f1_k{k} {v:.4}"));
    }
    println!("{line}");
}
