//! Teacher-forced training with Adam, elementwise clipping, a per-epoch
//! learning-rate decay and best-on-dev checkpoint retention.

use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, Example};
use crate::metrics::{BinaryLabelMatrix, EvalReport};
use crate::model::Model;
use crate::seeds::derive_seed;
use crate::tensor::{Graph, ParamStore, Real, Tensor};
use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    /// Gradients are clamped elementwise into `[-clip, clip]`.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            lr: 3e-4,
            lr_decay: 0.5,
            clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.lr) || !pos(self.lr_decay) || !pos(self.clip) {
            return Err(Error::Config("lr, lr_decay and clip must be positive".into()));
        }
        Ok(())
    }
}

pub fn lr_schedule(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}

pub fn clip_gradients<F: Real>(grads: &mut [Tensor<F>], clip: f64) {
    let (lo, hi) = (F::of(-clip), F::of(clip));
    for g in grads {
        for x in g.data_mut() {
            if *x > hi {
                *x = hi;
            } else if *x < lo {
                *x = lo;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ParamStore<F>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

/// Bias-corrected Adam step. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_update<F: Real>(
    params: &mut ParamStore<F>,
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Model(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::Model(format!("gradient shape mismatch for {}", params.name(id))));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(state.beta1), F::of(state.beta2));
    let (c1, c2) = (F::one() - b1, F::one() - b2);
    let corr1 = F::of(1.0 - state.beta1.powi(t));
    let corr2 = F::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (F::of(state.lr), F::of(state.eps));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (state.m[i].data_mut(), state.v[i].data_mut(), grads[i].data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + c1 * g[j];
            v[j] = b2 * v[j] + c2 * g[j] * g[j];
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLoss {
    pub loss: f64,
    pub steps: usize,
    /// Gold probabilities raised to the floor.
    pub clamped: usize,
}

/// Per-step mean negative log-likelihood over any number of sequences, each
/// given as one distribution per gold step.
pub fn sequence_loss(sequences: &[(&[Vec<f64>], &[u32])]) -> Result<SequenceLoss> {
    let mut total = 0.0;
    let mut steps = 0;
    let mut clamped = 0;
    for (dists, gold) in sequences {
        if dists.len() != gold.len() {
            return Err(Error::Model(format!(
                "{} distributions for {} gold steps",
                dists.len(),
                gold.len()
            )));
        }
        for (d, &y) in dists.iter().zip(gold.iter()) {
            let p = *d
                .get(y as usize)
                .ok_or_else(|| Error::Model(format!("gold label {y} outside distribution")))?;
            if p < PROB_FLOOR {
                clamped += 1;
            }
            total -= p.max(PROB_FLOOR).ln();
            steps += 1;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} gold probabilities clamped to {PROB_FLOOR}");
    }
    if steps == 0 {
        return Err(Error::Model("no gold steps".into()));
    }
    Ok(SequenceLoss {
        loss: total / steps as f64,
        steps,
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct BatchGradients<F> {
    /// Summed negative log-likelihood over every step of the batch.
    pub loss_sum: f64,
    pub steps: usize,
    /// Gradient of the per-step mean loss, one tensor per parameter.
    pub grads: Vec<Tensor<F>>,
}

/// Gradients of the batch's per-step mean loss. Examples are processed one
/// graph at a time and accumulated in order, so results do not depend on
/// padding or on how examples are grouped beyond the step count.
pub fn batch_gradients<F: Real>(model: &Model<F>, rows: &[(&[u32], &[u32])]) -> Result<BatchGradients<F>> {
    let steps: usize = rows.iter().map(|(_, y)| y.len()).sum();
    if steps == 0 {
        return Err(Error::Model("empty batch".into()));
    }
    let inv = F::of(1.0 / steps as f64);
    let mut grads = model.params().zeros_like();
    let mut loss_sum = 0.0;
    for (tokens, labels) in rows {
        let mut g = Graph::new();
        let b = model.bind(&mut g, true);
        let loss = model.example_loss(&mut g, &b, tokens, labels)?;
        loss_sum += g.value(loss).data()[0].as_f64();
        let scaled = g.scale(loss, inv);
        g.backward(scaled)?;
        for (acc, &v) in grads.iter_mut().zip(&b.vars) {
            if let Some(grad) = g.grad(v) {
                acc.add_assign(grad);
            }
        }
    }
    Ok(BatchGradients { loss_sum, steps, grads })
}

pub fn evaluate<F: Real>(model: &Model<F>, examples: &[Example], bands: &[usize]) -> Result<EvalReport> {
    let labels = model.config().labels;
    let pred = model.predict_sets(examples.iter().map(|e| e.tokens.as_slice()))?;
    let gold: Vec<&[u32]> = examples.iter().map(Example::gold).collect();
    EvalReport::compute(
        &BinaryLabelMatrix::from_label_sets(&pred, labels)?,
        &BinaryLabelMatrix::from_label_sets(&gold, labels)?,
        bands,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub dev_hl: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the highest dev micro-F1 (earliest on ties). `seed` drives batching.
pub fn train<F: Real>(
    model: &mut Model<F>,
    cfg: &TrainConfig,
    train_set: &[Example],
    dev_set: &[Example],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dev_set.is_empty() {
        return Err(Error::Model("development set is empty".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Model("training set is empty".into()));
    }
    let mut opt = OptimizerState::new(model.params(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<F>)> = None;
    for epoch in 0..cfg.epochs {
        opt.lr = lr_schedule(cfg.lr, cfg.lr_decay, epoch);
        let batches = make_batches(train_set, cfg.batch_size, derive_seed(seed, epoch as u64))?;
        let (mut loss_sum, mut steps) = (0.0, 0);
        for batch in &batches {
            let rows: Vec<(&[u32], &[u32])> = (0..batch.len()).map(|r| batch.row(r)).collect();
            let mut bg = batch_gradients(model, &rows)?;
            clip_gradients(&mut bg.grads, cfg.clip);
            adam_update(model.params_mut(), &bg.grads, &mut opt)?;
            loss_sum += bg.loss_sum;
            steps += bg.steps;
        }
        let dev = evaluate(model, dev_set, &[])?;
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / steps as f64,
            lr: opt.lr,
            dev_hl: dev.hl,
            dev_p: dev.p,
            dev_r: dev.r,
            dev_f1: dev.f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} lr {:.3e} dev f1 {:.4} hl {:.4}",
            rec.loss,
            rec.lr,
            rec.dev_f1,
            rec.dev_hl
        );
        on_epoch(&rec);
        if best.as_ref().is_none_or(|(_, f1, _)| rec.dev_f1 > *f1) {
            best = Some((epoch, rec.dev_f1, model.params().clone()));
        }
        history.push(rec);
    }
    let (best_epoch, best_dev_f1, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_dev_f1,
    })
}
