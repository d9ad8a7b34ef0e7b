//! LSTM label decoder with pluggable attention over word annotations `h`
//! and semantic units `g`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{lstm_step, uniform, Annotations, LstmParamIds, LstmParams, LstmState};
use crate::tensor::{Graph, ParamId, ParamStore, Real, TensorError, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    None,
    Conventional,
    MdcOnly,
    Additive,
    Hybrid,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 5] = [
        AttentionVariant::None,
        AttentionVariant::Conventional,
        AttentionVariant::MdcOnly,
        AttentionVariant::Additive,
        AttentionVariant::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::None => "none",
            AttentionVariant::Conventional => "conventional",
            AttentionVariant::MdcOnly => "mdc_only",
            AttentionVariant::Additive => "additive",
            AttentionVariant::Hybrid => "hybrid",
        }
    }

    pub fn uses_words(self) -> bool {
        matches!(
            self,
            AttentionVariant::Conventional | AttentionVariant::Additive | AttentionVariant::Hybrid
        )
    }

    pub fn uses_units(self) -> bool {
        matches!(
            self,
            AttentionVariant::MdcOnly | AttentionVariant::Additive | AttentionVariant::Hybrid
        )
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown attention variant {s:?} (expected none, conventional, mdc_only, additive or hybrid)"
                ))
            })
    }
}

/// One attention hop: bilinear scores `W_a` and combination `W_c` mapping
/// `[query ; context]` back to the hidden size.
#[derive(Debug, Clone, Copy)]
pub struct HopParams {
    pub w_a: Var,
    pub w_c: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopParamIds {
    pub w_a: ParamId,
    pub w_c: ParamId,
}

impl HopParamIds {
    fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        hidden: usize,
        memory_dim: usize,
        rng: &mut impl Rng,
        scale: f64,
    ) -> Self {
        Self {
            w_a: store.insert(format!("{prefix}.w_a"), uniform(&[hidden, memory_dim], rng, scale)),
            w_c: store.insert(
                format!("{prefix}.w_c"),
                uniform(&[hidden + memory_dim, hidden], rng, scale),
            ),
        }
    }

    fn bind(&self, vars: &[Var]) -> HopParams {
        HopParams {
            w_a: vars[self.w_a.index()],
            w_c: vars[self.w_c.index()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    /// `[L + 2, E]`: rows `0..L` labels, `L` end-of-sequence, `L + 1` start.
    pub label_embed: Var,
    pub lstm: LstmParams,
    pub init_h_w: Var,
    pub init_h_b: Var,
    pub init_c_w: Var,
    pub init_c_b: Var,
    /// Hop over semantic units.
    pub units: Option<HopParams>,
    /// Hop over word annotations.
    pub words: Option<HopParams>,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderParamIds {
    pub label_embed: ParamId,
    pub lstm: LstmParamIds,
    pub init_h_w: ParamId,
    pub init_h_b: ParamId,
    pub init_c_w: ParamId,
    pub init_c_b: ParamId,
    pub units: Option<HopParamIds>,
    pub words: Option<HopParamIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub labels: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl DecoderParamIds {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        variant: AttentionVariant,
        dims: DecoderDims,
        rng: &mut impl Rng,
        scale: f64,
    ) -> Self {
        let DecoderDims { labels, embed, hidden } = dims;
        let label_embed = store.insert("dec.label_embed", uniform(&[labels + 2, embed], rng, scale));
        let lstm = LstmParamIds::register(store, "dec.lstm", embed, hidden, rng, scale);
        let init_h_w = store.insert("dec.init_h.w", uniform(&[2 * hidden, hidden], rng, scale));
        let init_h_b = store.insert("dec.init_h.b", uniform(&[hidden], rng, scale));
        let init_c_w = store.insert("dec.init_c.w", uniform(&[2 * hidden, hidden], rng, scale));
        let init_c_b = store.insert("dec.init_c.b", uniform(&[hidden], rng, scale));
        let units = variant
            .uses_units()
            .then(|| HopParamIds::register(store, "att.units", hidden, hidden, rng, scale));
        let words = variant
            .uses_words()
            .then(|| HopParamIds::register(store, "att.words", hidden, 2 * hidden, rng, scale));
        let out_w = store.insert("out.w", uniform(&[hidden, labels + 1], rng, scale));
        let out_b = store.insert("out.b", uniform(&[labels + 1], rng, scale));
        Self {
            label_embed,
            lstm,
            init_h_w,
            init_h_b,
            init_c_w,
            init_c_b,
            units,
            words,
            out_w,
            out_b,
        }
    }

    pub fn bind(&self, vars: &[Var]) -> DecoderParams {
        DecoderParams {
            label_embed: vars[self.label_embed.index()],
            lstm: self.lstm.bind(vars),
            init_h_w: vars[self.init_h_w.index()],
            init_h_b: vars[self.init_h_b.index()],
            init_c_w: vars[self.init_c_w.index()],
            init_c_b: vars[self.init_c_b.index()],
            units: self.units.map(|h| h.bind(vars)),
            words: self.words.map(|h| h.bind(vars)),
            out_w: vars[self.out_w.index()],
            out_b: vars[self.out_b.index()],
        }
    }
}

impl DecoderParams {
    pub fn labels<F: Real>(&self, g: &Graph<'_, F>) -> usize {
        g.shape(self.out_b)[0] - 1
    }

    pub fn eos<F: Real>(&self, g: &Graph<'_, F>) -> usize {
        self.labels(g)
    }

    pub fn bos<F: Real>(&self, g: &Graph<'_, F>) -> usize {
        self.labels(g) + 1
    }
}

/// Attention memory with its transpose cached for scoring.
#[derive(Debug, Clone, Copy)]
pub struct Memory {
    pub values: Var,
    pub transposed: Var,
}

impl Memory {
    pub fn new<F: Real>(g: &mut Graph<'_, F>, values: Var) -> Result<Self> {
        let transposed = g.transpose(values)?;
        Ok(Self { values, transposed })
    }
}

/// Memories available to the decoder for one example.
#[derive(Debug, Clone, Copy)]
pub struct Memories {
    pub words: Option<Memory>,
    pub units: Option<Memory>,
}

/// Bilinear attention: `e_i = qᵀ W_a m_i`, weights `softmax(e)`, context
/// `Σ α_i m_i`. Returns `([1, m] weights, [1, D] context)`.
pub fn attend<F: Real>(g: &mut Graph<'_, F>, query: Var, memory: &Memory, w_a: Var) -> Result<(Var, Var)> {
    if g.shape(memory.values)[0] == 0 {
        return Err(Error::Model("attention over an empty memory".into()));
    }
    let projected = g.matmul(query, w_a)?;
    let scores = g.matmul(projected, memory.transposed)?;
    let weights = g.softmax(scores, 1)?;
    let context = g.matmul(weights, memory.values)?;
    Ok((weights, context))
}

fn hop<F: Real>(g: &mut Graph<'_, F>, query: Var, memory: &Memory, p: &HopParams) -> Result<Var> {
    let (_, context) = attend(g, query, memory, p.w_a)?;
    let joined = g.concat(&[query, context], 1)?;
    let mixed = g.matmul(joined, p.w_c)?;
    Ok(g.tanh(mixed))
}

fn need<T: Copy>(x: Option<T>, what: &str, variant: AttentionVariant) -> Result<T> {
    x.ok_or_else(|| Error::Model(format!("attention variant {variant} requires {what}")))
}

/// Attentional output `o_t` from the post-update decoder state `s_t`.
pub fn attention_output<F: Real>(
    g: &mut Graph<'_, F>,
    s: Var,
    mem: &Memories,
    p: &DecoderParams,
    variant: AttentionVariant,
) -> Result<Var> {
    let words = || need(mem.words, "word annotations", variant);
    let units = || need(mem.units, "semantic units", variant);
    let words_hop = || need(p.words, "word-level attention parameters", variant);
    let units_hop = || need(p.units, "unit-level attention parameters", variant);
    match variant {
        AttentionVariant::None => Ok(s),
        AttentionVariant::Conventional => hop(g, s, &words()?, &words_hop()?),
        AttentionVariant::MdcOnly => hop(g, s, &units()?, &units_hop()?),
        AttentionVariant::Additive => {
            let a = hop(g, s, &units()?, &units_hop()?)?;
            let b = hop(g, s, &words()?, &words_hop()?)?;
            Ok(g.add(a, b)?)
        }
        AttentionVariant::Hybrid => {
            let first = hop(g, s, &units()?, &units_hop()?)?;
            let second = hop(g, first, &words()?, &words_hop()?)?;
            Ok(g.add(first, second)?)
        }
    }
}

/// Decoder start state `tanh(W [fwd ; bwd] + b)` for hidden and cell.
pub fn init_state<F: Real>(g: &mut Graph<'_, F>, ann: &Annotations, p: &DecoderParams) -> Result<LstmState> {
    let hf = g.concat(&[ann.forward_final.h, ann.backward_final.h], 1)?;
    let cf = g.concat(&[ann.forward_final.c, ann.backward_final.c], 1)?;
    let h = g.matmul(hf, p.init_h_w)?;
    let h = g.add(h, p.init_h_b)?;
    let c = g.matmul(cf, p.init_c_w)?;
    let c = g.add(c, p.init_c_b)?;
    Ok(LstmState {
        h: g.tanh(h),
        c: g.tanh(c),
    })
}

/// One decoding step. Returns `[1, L + 1]` logits and the advanced state.
pub fn decode_step<F: Real>(
    g: &mut Graph<'_, F>,
    prev_label: usize,
    state: LstmState,
    mem: &Memories,
    p: &DecoderParams,
    variant: AttentionVariant,
) -> Result<(Var, LstmState)> {
    let x = g.embedding(p.label_embed, &[prev_label])?;
    let proj = g.matmul(x, p.lstm.w_input)?;
    let proj = g.add(proj, p.lstm.bias)?;
    let next = lstm_step(g, proj, state, &p.lstm)?;
    let o = attention_output(g, next.h, mem, p, variant)?;
    let logits = g.matmul(o, p.out_w)?;
    let logits = g.add(logits, p.out_b)?;
    Ok((logits, next))
}

/// Teacher-forced logits `[T, L + 1]` for the gold sequence `gold`
/// (terminator included): step `t` is fed `gold[t - 1]`, step 0 the start
/// label.
pub fn teacher_forced_logits<F: Real>(
    g: &mut Graph<'_, F>,
    gold: &[u32],
    start: LstmState,
    mem: &Memories,
    p: &DecoderParams,
    variant: AttentionVariant,
) -> Result<Var> {
    if gold.is_empty() {
        return Err(Error::Model("empty gold label sequence".into()));
    }
    let mut inputs = Vec::with_capacity(gold.len());
    inputs.push(p.bos(g));
    inputs.extend(gold[..gold.len() - 1].iter().map(|&y| y as usize));
    let x = g.embedding(p.label_embed, &inputs)?;
    let proj = g.matmul(x, p.lstm.w_input)?;
    let proj = g.add(proj, p.lstm.bias)?;
    let mut state = start;
    let mut outputs = Vec::with_capacity(gold.len());
    for t in 0..gold.len() {
        let row = g.row(proj, t)?;
        state = lstm_step(g, row, state, &p.lstm)?;
        outputs.push(attention_output(g, state.h, mem, p, variant)?);
    }
    let o = g.concat(&outputs, 0)?;
    let logits = g.matmul(o, p.out_w)?;
    Ok(g.add(logits, p.out_b)?)
}

/// Numerically stable softmax of one logit row, in `f64`.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest probability among unmasked entries; ties go to the
/// lowest index.
pub fn masked_argmax(probs: &[f64], masked: &[bool]) -> usize {
    let mut best = None;
    for (i, &p) in probs.iter().enumerate() {
        if masked[i] {
            continue;
        }
        match best {
            Some((_, bp)) if bp >= p => {}
            _ => best = Some((i, p)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(probs.len() - 1)
}

/// Greedy decoding driven by `step`, which maps the previous label to the
/// next label distribution (over `L` labels plus end-of-sequence at index
/// `L`). With `mask_emitted`, labels already produced are excluded; the
/// terminator never is. Runs at most `L + 1` steps.
pub fn greedy_labels(
    labels: usize,
    mask_emitted: bool,
    mut step: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Vec<u32>> {
    let eos = labels;
    let mut masked = vec![false; labels + 1];
    let mut out = Vec::new();
    let mut prev = labels + 1;
    for _ in 0..=labels {
        let probs = step(prev)?;
        if probs.len() != labels + 1 {
            return Err(TensorError::ShapeMismatch {
                op: "greedy_decode",
                lhs: vec![probs.len()],
                rhs: vec![labels + 1],
            }
            .into());
        }
        let y = masked_argmax(&probs, &masked);
        if y == eos {
            break;
        }
        if mask_emitted {
            masked[y] = true;
        }
        out.push(y as u32);
        prev = y;
    }
    Ok(out)
}

/// Greedy label sequence for one encoded example, end-of-sequence excluded.
pub fn greedy_decode<F: Real>(
    g: &mut Graph<'_, F>,
    start: LstmState,
    mem: &Memories,
    p: &DecoderParams,
    variant: AttentionVariant,
    mask_emitted: bool,
) -> Result<Vec<u32>> {
    let labels = p.labels(g);
    let mut state = start;
    greedy_labels(labels, mask_emitted, |prev| {
        let (logits, next) = decode_step(g, prev, state, mem, p, variant)?;
        state = next;
        Ok(softmax_row(&g.value(logits).to_f64_vec()))
    })
}
