//! Multi-level dilated convolution over encoder annotations, and the
//! gridding check for dilation schedules.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::uniform;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("dilation schedule has no layers")]
    Empty,
    #[error("kernel size must be at least 2, got {0}")]
    KernelSize(usize),
    #[error("dilation rate at layer {layer} must be positive")]
    NonPositiveRate { layer: usize },
    #[error("dilation rates {rates:?} leave coverage holes: M = {m:?}, M_2 = {m2} > K = {kernel}")]
    Gridding {
        rates: Vec<usize>,
        m: Vec<i64>,
        m2: i64,
        kernel: usize,
    },
}

/// Maximum distance between two nonzero taps seen by each layer, computed
/// top-down from `M_N = r_N`.
pub fn m_sequence(rates: &[usize]) -> Vec<i64> {
    let n = rates.len();
    let mut m = vec![0i64; n];
    if n == 0 {
        return m;
    }
    m[n - 1] = rates[n - 1] as i64;
    for i in (0..n - 1).rev() {
        let (next, r) = (m[i + 1], rates[i] as i64);
        m[i] = (next - 2 * r).max(next - 2 * (next - r)).max(r);
    }
    m
}

/// Validated kernel size and per-layer dilation rates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationSchedule {
    kernel: usize,
    rates: Vec<usize>,
    m: Vec<i64>,
}

impl DilationSchedule {
    pub fn new(kernel: usize, rates: &[usize]) -> Result<Self, ScheduleError> {
        if rates.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if kernel < 2 {
            return Err(ScheduleError::KernelSize(kernel));
        }
        if let Some(layer) = rates.iter().position(|&r| r == 0) {
            return Err(ScheduleError::NonPositiveRate { layer: layer + 1 });
        }
        let m = m_sequence(rates);
        if m.len() >= 2 && m[1] > kernel as i64 {
            return Err(ScheduleError::Gridding {
                rates: rates.to_vec(),
                m2: m[1],
                m,
                kernel,
            });
        }
        Ok(Self {
            kernel,
            rates: rates.to_vec(),
            m,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn rates(&self) -> &[usize] {
        &self.rates
    }

    pub fn m(&self) -> &[i64] {
        &self.m
    }

    pub fn layers(&self) -> usize {
        self.rates.len()
    }

    pub fn span(&self) -> usize {
        receptive_span(self.kernel, &self.rates)
    }

    /// Number of semantic units produced for `n` annotations.
    pub fn units(&self, n: usize) -> usize {
        n.max(self.span()) + 1 - self.span()
    }
}

impl fmt::Display for DilationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K={} rates={:?} M={:?}", self.kernel, self.rates, self.m)
    }
}

pub fn validate_schedule(kernel: usize, rates: &[usize]) -> Result<DilationSchedule, ScheduleError> {
    DilationSchedule::new(kernel, rates)
}

pub fn receptive_span(kernel: usize, rates: &[usize]) -> usize {
    1 + (kernel - 1) * rates.iter().sum::<usize>()
}

#[derive(Debug, Clone)]
pub struct MdcParams {
    /// Layer `i` kernel is `[K, C_in, H]`, with `C_in = 2H` for the first layer.
    pub kernels: Vec<Var>,
    pub biases: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdcParamIds {
    pub kernels: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl MdcParamIds {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        schedule: &DilationSchedule,
        hidden: usize,
        rng: &mut impl Rng,
        scale: f64,
    ) -> Self {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for layer in 0..schedule.layers() {
            let c_in = if layer == 0 { 2 * hidden } else { hidden };
            kernels.push(store.insert(
                format!("mdc.{layer}.kernel"),
                uniform(&[schedule.kernel(), c_in, hidden], rng, scale),
            ));
            biases.push(store.insert(format!("mdc.{layer}.bias"), uniform(&[hidden], rng, scale)));
        }
        Self { kernels, biases }
    }

    pub fn bind(&self, vars: &[Var]) -> MdcParams {
        MdcParams {
            kernels: self.kernels.iter().map(|id| vars[id.index()]).collect(),
            biases: self.biases.iter().map(|id| vars[id.index()]).collect(),
        }
    }
}

/// Semantic units `[m, H]` from annotations `[n, 2H]`. Inputs shorter than
/// the receptive span are right-padded with zero rows first.
pub fn mdc_forward<F: Real>(
    g: &mut Graph<'_, F>,
    annotations: Var,
    schedule: &DilationSchedule,
    params: &MdcParams,
) -> Result<Var> {
    let shape = g.shape(annotations).to_vec();
    let (n, channels) = (shape[0], shape[1]);
    let span = schedule.span();
    let mut x = if n < span {
        let pad = g.constant(Tensor::zeros(&[span - n, channels]));
        g.concat(&[annotations, pad], 0)?
    } else {
        annotations
    };
    for (layer, &rate) in schedule.rates().iter().enumerate() {
        let conv = g.dilated_conv1d(x, params.kernels[layer], rate)?;
        let biased = g.add(conv, params.biases[layer])?;
        x = g.relu(biased);
    }
    Ok(x)
}
