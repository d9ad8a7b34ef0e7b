//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `SEMUNIT_ACCEPTANCE_SKIP_TRENDS=1` to skip the three trend criteria,
//! which share roughly twenty desk-scale training runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semunit::config::RunConfig;
use semunit::corpus::GenConfig;
use semunit::decoder::AttentionVariant;
use semunit::mdc::{mdc_forward, validate_schedule, DilationSchedule, MdcParamIds, ScheduleError};
use semunit::metrics::{hamming_loss, micro_prf, BinaryLabelMatrix};
use semunit::model::{Model, ModelConfig};
use semunit::pipeline::{generate_corpus, train_run, Dataset};
use semunit::tensor::{grad_check_with, primitive_grad_errors, Graph, ParamStore, Tensor, TensorError, Var};
use semunit::trainer::{train, TrainConfig};
use semunit::Error;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

// ---------------------------------------------------------------- gradients

fn micro_corpus_loss(model: &Model<f64>) -> impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError> + '_ {
    const MICRO: [(&[u32], &[u32]); 2] = [(&[4, 5, 6, 7, 4, 5, 8, 9], &[0, 2, 3]), (&[9, 6, 7], &[1, 3])];
    move |g, xs| {
        let b = model.bind_vars(xs.to_vec());
        let mut total: Option<Var> = None;
        for (tokens, labels) in MICRO {
            let l = model.example_loss(g, &b, tokens, labels).map_err(|e| match e {
                Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        Ok(g.scale(total.expect("two examples"), 1.0 / 5.0))
    }
}

/// Step for whole-model checks. The loss sums several hundred f64 terms, so
/// steps much below this let cancellation noise swamp the smallest gradient
/// coordinates.
const END_TO_END_EPS: f64 = 1e-4;

fn gradient_suite() -> Verdict {
    const SEEDS: u64 = 10;
    let start = Instant::now();
    let prims = primitive_grad_errors(SEEDS);
    let worst_prim = prims
        .iter()
        .cloned()
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });

    let mut worst_model = (AttentionVariant::None, 0, 0.0f64);
    for seed in 0..SEEDS {
        for variant in AttentionVariant::ALL {
            let cfg = ModelConfig {
                init_scale: 0.5,
                ..ModelConfig::new(10, 3, 4, variant)
            };
            let model = Model::<f64>::new(cfg, seed).unwrap();
            let err = grad_check_with(micro_corpus_loss(&model), model.params().tensors(), END_TO_END_EPS);
            if err > worst_model.2 {
                worst_model = (variant, seed, err);
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst_prim.1 < 1e-4 && worst_model.2 < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "{} primitives x {SEEDS} seeds, worst {} {:.1e} (< 1e-4); end-to-end H=4 x 5 variants x {SEEDS} seeds (step {END_TO_END_EPS:e}), worst {} seed {} {:.1e} (< 1e-3); {:.1}s",
            prims.len(),
            worst_prim.0,
            worst_prim.1,
            worst_model.0,
            worst_model.1,
            worst_model.2,
            elapsed.as_secs_f64()
        ),
    )
}

// ----------------------------------------------------------------- schedule

/// Offsets (relative to the first input position) that reach one output of
/// a stack of dilated convolutions, enumerated directly.
fn reachable_offsets(kernel: usize, rates: &[usize]) -> BTreeSet<usize> {
    let mut reach = BTreeSet::from([0usize]);
    for &r in rates.iter().rev() {
        reach = reach
            .iter()
            .flat_map(|&o| (0..kernel).map(move |k| o + k * r))
            .collect();
    }
    reach
}

/// M-sequence by the backward recurrence, written out independently.
fn m_oracle(rates: &[usize]) -> Vec<i64> {
    let n = rates.len();
    let mut m = vec![0i64; n];
    m[n - 1] = rates[n - 1] as i64;
    for i in (0..n - 1).rev() {
        let r = rates[i] as i64;
        let next = m[i + 1];
        m[i] = (next - 2 * r).max(next - 2 * (next - r)).max(r);
    }
    m
}

fn schedule_validator() -> Verdict {
    let ok = validate_schedule(3, &[1, 2, 3]);
    let oracle_ok = m_oracle(&[1, 2, 3]);
    let accepted = matches!(&ok, Ok(s) if s.m() == oracle_ok.as_slice() && s.m()[1] == 2);
    let dense = reachable_offsets(3, &[1, 2, 3]);
    let contiguous = dense.len() == 13 && *dense.last().unwrap() == 12;

    let oracle_bad = m_oracle(&[2, 4, 8]);
    let rejected = matches!(
        validate_schedule(3, &[2, 4, 8]),
        Err(ScheduleError::Gridding { m2, .. }) if m2 == 4 && m2 == oracle_bad[1]
    );
    let holes = reachable_offsets(3, &[2, 4, 8]).len() < 1 + 2 * 14;
    verdict(
        accepted && contiguous && rejected && holes,
        format!(
            "[1,2,3]: M = {:?} (oracle {oracle_ok:?}), accepted = {}; [2,4,8]: oracle M_2 = {}, rejected with M_2 = 4: {rejected}; coverage oracle agrees: {}",
            ok.as_ref().map(|s| s.m().to_vec()).unwrap_or_default(),
            ok.is_ok(),
            oracle_bad[1],
            contiguous && holes
        ),
    )
}

fn receptive_field() -> Verdict {
    let (hidden, n) = (3, 30);
    let schedule = DilationSchedule::new(3, &[1, 2, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let ids = MdcParamIds::register(&mut store, &schedule, hidden, &mut rng, 0.5);
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|w: &mut f64| *w = w.abs() + 0.01);
    }
    let run = |x: &Tensor<f64>| -> Tensor<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = store.ids().map(|id| g.leaf_ref(store.get(id), false)).collect();
        let input = g.constant(x.clone());
        let out = mdc_forward(&mut g, input, &schedule, &ids.bind(&vars)).unwrap();
        g.value(out).clone()
    };
    let base_data: Vec<f64> = (0..n * 2 * hidden).map(|_| rng.gen_range(0.1..1.0)).collect();
    let base = Tensor::new(vec![n, 2 * hidden], base_data).unwrap();
    let out = run(&base);
    let units = out.shape()[0];

    let mut deps: Vec<Vec<usize>> = vec![Vec::new(); units];
    for p in 0..n {
        let mut bumped = base.clone();
        for c in 0..2 * hidden {
            bumped.data_mut()[p * 2 * hidden + c] += 0.25;
        }
        let moved = run(&bumped);
        for (u, d) in deps.iter_mut().enumerate() {
            if out.row_slice(u) != moved.row_slice(u) {
                d.push(p);
            }
        }
    }
    let exact = deps
        .iter()
        .all(|d| d.len() == 13 && d.last().unwrap() - d.first().unwrap() == 12);
    let sizes: BTreeSet<usize> = deps.iter().map(Vec::len).collect();
    verdict(
        exact && units == n - 12,
        format!("{units} units over {n} annotations; dependency set sizes {sizes:?}, all contiguous: {exact}"),
    )
}

// ------------------------------------------------------------------ metrics

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (n, l) = (rng.gen_range(1..=12), rng.gen_range(1..=10));
        let density = rng.gen_range(0.0..1.0);
        let mut draw = || -> Vec<Vec<bool>> {
            (0..n)
                .map(|_| (0..l).map(|_| rng.gen_bool(density)).collect())
                .collect()
        };
        let (pred, gold) = (draw(), draw());

        // brute-force recount over label sets
        let sets = |m: &[Vec<bool>]| -> Vec<BTreeSet<usize>> {
            m.iter()
                .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
                .collect()
        };
        let (ps, gs) = (sets(&pred), sets(&gold));
        let (mut tp, mut fp, mut fn_, mut hl_sum) = (0usize, 0usize, 0usize, 0.0);
        for (p, g) in ps.iter().zip(&gs) {
            tp += p.intersection(g).count();
            fp += p.difference(g).count();
            fn_ += g.difference(p).count();
            hl_sum += p.symmetric_difference(g).count() as f64 / l as f64;
        }
        let hl = hl_sum / n as f64;
        let prec = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rec = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if prec + rec == 0.0 {
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        };

        let pm = BinaryLabelMatrix::from_rows(pred, l).unwrap();
        let gm = BinaryLabelMatrix::from_rows(gold, l).unwrap();
        let got_hl = hamming_loss(&pm, &gm).unwrap();
        let got = micro_prf(&pm, &gm).unwrap();
        if (got_hl, got.p, got.r, got.f1) != (hl, prec, rec, f1) {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("100 random matrices (L <= 10), {mismatches} mismatches"),
    )
}

// ------------------------------------------------------------------ overfit

fn overfit() -> Verdict {
    let start = Instant::now();
    let gen = GenConfig {
        corpus_size: 50,
        ..GenConfig::default()
    };
    let (splits, _) = generate_corpus(&gen, 1).unwrap();
    let all: Vec<_> = splits.parts().concat();
    let only = semunit::pipeline::Splits {
        train: all.clone(),
        dev: all,
        test: Vec::new(),
    };
    let cfg = RunConfig::desk();
    let data = Dataset::build(&only, cfg.vocab_cap, cfg.max_len).unwrap();
    let mut model = Model::<f32>::new(cfg.model_config(data.vocab.len(), data.labels.len()), 1).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 5,
        lr_decay: 1.0,
        ..cfg.train_config()
    };
    let mut reached = None;
    let outcome = train(&mut model, &tc, &data.train, &data.train, 1, |r| {
        if reached.is_none() && r.dev_f1 >= 0.99 {
            reached = Some(r.epoch);
        }
    })
    .unwrap();
    let elapsed = start.elapsed();
    verdict(
        reached.is_some() && elapsed < Duration::from_secs(300),
        format!(
            "hybrid H=32 on 50 documents: best train F1 {:.4}, first epoch >= 0.99: {reached:?}; {:.1}s",
            outcome.best_dev_f1,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------- trends

const TREND_SEEDS: [u64; 3] = [1, 2, 3];
const BAND_KS: [usize; 2] = [5, 10];

#[derive(Default)]
struct TrendRuns {
    /// (variant or "hier5") -> per-seed (f1, band F1 per k)
    rows: BTreeMap<&'static str, Vec<(f64, BTreeMap<usize, f64>)>>,
    elapsed: Duration,
}

impl TrendRuns {
    fn f1(&self, key: &str) -> f64 {
        median(self.rows[key].iter().map(|r| r.0).collect())
    }

    fn band(&self, key: &str, k: usize) -> f64 {
        median(self.rows[key].iter().map(|r| r.1[&k]).collect())
    }

    fn drop(&self, key: &str, k: usize) -> f64 {
        median(self.rows[key].iter().map(|r| r.0 - r.1[&k]).collect())
    }
}

/// Phrases over one shared word pool, so topics are identified by ordered
/// word combinations rather than by any single word.
fn trend_corpus() -> GenConfig {
    GenConfig {
        shared_vocab: 30,
        ..GenConfig::default()
    }
}

fn run_trends() -> TrendRuns {
    let start = Instant::now();
    let mut runs = TrendRuns::default();
    for seed in TREND_SEEDS {
        let (splits, manifest) = generate_corpus(&trend_corpus(), seed).unwrap();
        assert_eq!(manifest.train, 2000);
        let cfg = RunConfig {
            seed,
            bands: BAND_KS.to_vec(),
            ..RunConfig::desk()
        };
        let data = Dataset::build(&splits, cfg.vocab_cap, cfg.max_len).unwrap();
        let mut jobs: Vec<(&'static str, RunConfig)> = AttentionVariant::ALL
            .iter()
            .map(|&v| {
                (
                    v.name(),
                    RunConfig {
                        attention_variant: v,
                        ..cfg.clone()
                    },
                )
            })
            .collect();
        jobs.push((
            "hier5",
            RunConfig {
                hier: Some(5),
                ..cfg.clone()
            },
        ));
        for (key, jcfg) in jobs {
            let run = train_run::<f32>(&jcfg, &data, |_| {}).unwrap();
            let rep = run.test.expect("test split");
            println!("       seed {seed} {key:<12} F1 {:.4} bands {:?}", rep.f1, rep.bands);
            runs.rows.entry(key).or_default().push((rep.f1, rep.bands));
        }
    }
    runs.elapsed = start.elapsed();
    runs
}

fn ablation_trend(t: &TrendRuns) -> Verdict {
    let [none, conv, mdc, add, hyb] = ["none", "conventional", "mdc_only", "additive", "hybrid"].map(|k| t.f1(k));
    verdict(
        hyb >= mdc && mdc >= none && hyb >= add && hyb - none >= 0.02 && t.elapsed < Duration::from_secs(1800),
        format!(
            "median test F1 hybrid {hyb:.4} mdc_only {mdc:.4} none {none:.4} additive {add:.4} (conventional {conv:.4}); all trend runs {:.0}s",
            t.elapsed.as_secs_f64()
        ),
    )
}

fn band_trend(t: &TrendRuns) -> Verdict {
    let (k0, k1) = (BAND_KS[0], BAND_KS[1]);
    let drop_h = t.drop("hybrid", k0);
    let drop_n = t.drop("none", k0);
    let gap0 = t.band("hybrid", k0) - t.band("none", k0);
    let gap1 = t.band("hybrid", k1) - t.band("none", k1);
    verdict(
        drop_h < drop_n && gap0 > 0.0 && gap1 > 0.0,
        format!(
            "F1 drop excluding top {k0} of 20 labels: hybrid {drop_h:.4} vs none {drop_n:.4}; band gap hybrid - none at k={k0} {gap0:.4}, k={k1} {gap1:.4}"
        ),
    )
}

fn hier_trend(t: &TrendRuns) -> Verdict {
    let (none, hier, hyb) = (t.f1("none"), t.f1("hier5"), t.f1("hybrid"));
    verdict(
        none <= hier && hier <= hyb,
        format!("median test F1 none {none:.4} <= hier5 {hier:.4} <= hybrid {hyb:.4}"),
    )
}

// -------------------------------------------------------------- determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_semunit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    for entry in walk(a) {
        let rel = entry.strip_prefix(a).unwrap();
        let other = b.join(rel);
        if fs::read(&entry).ok() != fs::read(&other).ok() {
            return Err(format!("{} differs", rel.display()));
        }
        n += 1;
    }
    Ok(n)
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let d = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let gen_cfg = d.join("gen.toml");
    fs::write(&gen_cfg, "topics = 6\ncorpus_size = 150\ndoc_len_max = 40\n").unwrap();
    let result = (|| -> Result<usize, String> {
        let (c1, c2) = (d.join("c1"), d.join("c2"));
        cli(&["gencorpus", "--config", &s(&gen_cfg), "--seed", "4", "--out", &s(&c1)])?;
        cli(&[
            "gencorpus",
            "--config",
            &s(&c1.join("gencorpus.toml")),
            "--out",
            &s(&c2),
        ])?;
        let mut files = same_files(&c1, &c2)?;

        let (t1, t2) = (d.join("t1"), d.join("t2"));
        cli(&[
            "train",
            "--data",
            &s(&c1),
            "--out",
            &s(&t1),
            "--epochs",
            "2",
            "--hidden",
            "8",
            "--seed",
            "4",
            "--hier",
            "5",
        ])?;
        cli(&["train", "--config", &s(&t1.join("config.toml")), "--out", &s(&t2)])?;
        files += same_files(&t1, &t2)?;

        let test = s(&c1.join("test.jsonl"));
        let (e1, e2) = (d.join("e1"), d.join("e2"));
        cli(&[
            "eval",
            "--checkpoint",
            &s(&t1),
            "--data",
            &test,
            "--bands",
            "1,2",
            "--out",
            &s(&e1),
        ])?;
        cli(&["eval", "--config", &s(&e1.join("eval.toml")), "--out", &s(&e2)])?;
        files += same_files(&e1, &e2)?;

        let (a1, a2) = (d.join("a1"), d.join("a2"));
        cli(&[
            "ablate",
            "--data",
            &s(&c1),
            "--out",
            &s(&a1),
            "--epochs",
            "1",
            "--hidden",
            "8",
        ])?;
        cli(&["ablate", "--config", &s(&a1.join("config.toml")), "--out", &s(&a2)])?;
        files += same_files(&a1, &a2)?;
        Ok(files)
    })();
    match result {
        Ok(n) => verdict(
            true,
            format!("gencorpus, train, eval and ablate rerun from resolved configs: {n} files identical"),
        ),
        Err(e) => verdict(false, e),
    }
}

fn main() -> ExitCode {
    let skip_trends = std::env::var_os("SEMUNIT_ACCEPTANCE_SKIP_TRENDS").is_some();
    let mut criteria: Vec<(&str, Verdict)> = vec![
        ("gradient suite", gradient_suite()),
        ("schedule validator", schedule_validator()),
        ("receptive field", receptive_field()),
        ("metric oracle", metric_oracle()),
        ("overfit sanity", overfit()),
        ("determinism", determinism()),
    ];
    for (name, v) in &criteria {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if skip_trends {
        println!("SKIP ablation trend, frequency-band trend, hier-5 trend");
    } else {
        let t = run_trends();
        for (name, v) in [
            ("ablation trend", ablation_trend(&t)),
            ("frequency-band trend", band_trend(&t)),
            ("hier-5 trend", hier_trend(&t)),
        ] {
            println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            criteria.push((name, v));
        }
    }
    let failed = criteria.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
