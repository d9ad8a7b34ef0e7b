//! Full classifier: BiLSTM encoder, semantic-unit encoder (dilated
//! convolution or hierarchical), attentional label decoder.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocabulary, Vocabulary};
use crate::decoder::{
    greedy_decode, init_state, softmax_row, teacher_forced_logits, AttentionVariant, DecoderDims, DecoderParamIds,
    DecoderParams, Memories, Memory,
};
use crate::encoder::{bilstm_encode, hier_encode, uniform, Annotations, LstmParamIds, LstmParams, LstmState};
use crate::mdc::{mdc_forward, DilationSchedule, MdcParamIds, MdcParams};
use crate::tensor::{checkpoint, Graph, ParamId, ParamStore, Precision, Real, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub labels: usize,
    pub embed: usize,
    pub hidden: usize,
    pub variant: AttentionVariant,
    pub kernel_size: usize,
    pub dilation_rates: Vec<usize>,
    /// Segment length of the hierarchical encoder that replaces the dilated
    /// convolution as the source of semantic units.
    pub hier: Option<usize>,
    pub init_scale: f64,
    pub mask_emitted: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, labels: usize, hidden: usize, variant: AttentionVariant) -> Self {
        Self {
            vocab_size,
            labels,
            embed: hidden,
            hidden,
            variant,
            kernel_size: 3,
            dilation_rates: vec![1, 2, 3],
            hier: None,
            init_scale: 0.08,
            mask_emitted: true,
        }
    }

    pub fn schedule(&self) -> Result<DilationSchedule> {
        Ok(DilationSchedule::new(self.kernel_size, &self.dilation_rates)?)
    }

    pub fn validate(&self) -> Result<DilationSchedule> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("labels", self.labels),
            ("embed", self.embed),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hier == Some(0) {
            return Err(Error::Config("hier must be at least 1".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be a finite non-negative number".into()));
        }
        self.schedule()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnitEncoderIds {
    Dilated(MdcParamIds),
    Hier(LstmParamIds),
}

#[derive(Debug, Clone)]
pub enum UnitEncoder {
    Dilated(MdcParams),
    Hier(LstmParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelIds {
    pub embed: ParamId,
    pub enc_fwd: LstmParamIds,
    pub enc_bwd: LstmParamIds,
    pub units: Option<UnitEncoderIds>,
    pub decoder: DecoderParamIds,
}

/// Graph handles for every parameter of a model.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub embed: Var,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub units: Option<UnitEncoder>,
    pub decoder: DecoderParams,
}

/// Encoder outputs consumed by the decoder.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub annotations: Annotations,
    pub memories: Memories,
    pub start: LstmState,
}

#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    config: ModelConfig,
    schedule: DilationSchedule,
    store: ParamStore<F>,
    ids: ModelIds,
}

impl<F: Real> Model<F> {
    /// Fresh model with parameters drawn uniformly from `±init_scale`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let schedule = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.init_scale;
        let (h, e) = (config.hidden, config.embed);
        let mut store = ParamStore::new();
        let embed = store.insert("enc.embed", uniform(&[config.vocab_size, e], &mut rng, scale));
        let enc_fwd = LstmParamIds::register(&mut store, "enc.fwd", e, h, &mut rng, scale);
        let enc_bwd = LstmParamIds::register(&mut store, "enc.bwd", e, h, &mut rng, scale);
        let units = config.variant.uses_units().then(|| match config.hier {
            Some(_) => UnitEncoderIds::Hier(LstmParamIds::register(&mut store, "hier", 2 * h, h, &mut rng, scale)),
            None => UnitEncoderIds::Dilated(MdcParamIds::register(&mut store, &schedule, h, &mut rng, scale)),
        });
        let decoder = DecoderParamIds::register(
            &mut store,
            config.variant,
            DecoderDims {
                labels: config.labels,
                embed: e,
                hidden: h,
            },
            &mut rng,
            scale,
        );
        Ok(Self {
            config,
            schedule,
            store,
            ids: ModelIds {
                embed,
                enc_fwd,
                enc_bwd,
                units,
                decoder,
            },
        })
    }

    /// Model whose parameters are taken from `params`, which must hold
    /// exactly the tensors this configuration defines.
    pub fn with_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Model(format!(
                "parameter count {} does not match the configuration ({})",
                params.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let src = params
                .by_name(&name)
                .ok_or_else(|| Error::Model(format!("missing parameter {name}")))?;
            if src.shape() != model.store.get(id).shape() {
                return Err(Error::Model(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = src.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &DilationSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            store: self.store.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Records every parameter as a leaf of `g`, borrowing the stored tensors.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, F>, requires_grad: bool) -> Bound {
        let vars: Vec<Var> = self
            .store
            .ids()
            .map(|id| g.leaf_ref(self.store.get(id), requires_grad))
            .collect();
        self.bind_vars(vars)
    }

    /// [`Bound`] over caller-provided handles, one per parameter in
    /// registration order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound {
        let ids = &self.ids;
        Bound {
            embed: vars[ids.embed.index()],
            enc_fwd: ids.enc_fwd.bind(&vars),
            enc_bwd: ids.enc_bwd.bind(&vars),
            units: ids.units.as_ref().map(|u| match u {
                UnitEncoderIds::Dilated(m) => UnitEncoder::Dilated(m.bind(&vars)),
                UnitEncoderIds::Hier(l) => UnitEncoder::Hier(l.bind(&vars)),
            }),
            decoder: ids.decoder.bind(&vars),
            vars,
        }
    }

    pub fn encode(&self, g: &mut Graph<'_, F>, b: &Bound, tokens: &[u32]) -> Result<Encoded> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Model(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let annotations = bilstm_encode(g, tokens, b.embed, &b.enc_fwd, &b.enc_bwd)?;
        let words = if self.config.variant.uses_words() {
            Some(Memory::new(g, annotations.states)?)
        } else {
            None
        };
        let units = match (&b.units, self.config.hier) {
            (Some(UnitEncoder::Dilated(p)), _) => {
                let u = mdc_forward(g, annotations.states, &self.schedule, p)?;
                Some(Memory::new(g, u)?)
            }
            (Some(UnitEncoder::Hier(p)), Some(n)) => {
                let u = hier_encode(g, &annotations, n, p)?;
                Some(Memory::new(g, u)?)
            }
            _ => None,
        };
        let start = init_state(g, &annotations, &b.decoder)?;
        Ok(Encoded {
            annotations,
            memories: Memories { words, units },
            start,
        })
    }

    fn check_labels(&self, labels: &[u32]) -> Result<()> {
        let eos = self.config.labels as u32;
        match labels.split_last() {
            Some((&last, body)) if last == eos && body.iter().all(|&y| y < eos) => Ok(()),
            _ => Err(Error::Model(format!(
                "label sequence {labels:?} must be label ids below {eos} terminated by {eos}"
            ))),
        }
    }

    /// Teacher-forced logits `[T, L + 1]` for a gold sequence ending in the
    /// terminator.
    pub fn logits(&self, g: &mut Graph<'_, F>, b: &Bound, tokens: &[u32], labels: &[u32]) -> Result<Var> {
        self.check_labels(labels)?;
        let enc = self.encode(g, b, tokens)?;
        teacher_forced_logits(g, labels, enc.start, &enc.memories, &b.decoder, self.config.variant)
    }

    /// Summed negative log-likelihood of the gold sequence, as a `[1]` node.
    pub fn example_loss(&self, g: &mut Graph<'_, F>, b: &Bound, tokens: &[u32], labels: &[u32]) -> Result<Var> {
        let logits = self.logits(g, b, tokens, labels)?;
        let targets: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
        Ok(g.cross_entropy(logits, &targets)?)
    }

    /// Per-step label distributions under teacher forcing.
    pub fn step_distributions(&self, tokens: &[u32], labels: &[u32]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let logits = self.logits(&mut g, &b, tokens, labels)?;
        let v = g.value(logits).to_f64_vec();
        Ok(v.chunks(self.config.labels + 1).map(softmax_row).collect())
    }

    /// Greedy label ids, terminator excluded, in emission order.
    pub fn predict(&self, tokens: &[u32]) -> Result<Vec<u32>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let enc = self.encode(&mut g, &b, tokens)?;
        greedy_decode(
            &mut g,
            enc.start,
            &enc.memories,
            &b.decoder,
            self.config.variant,
            self.config.mask_emitted,
        )
    }

    /// Predicted label sets, sorted and deduplicated.
    pub fn predict_sets<'a>(&self, docs: impl IntoIterator<Item = &'a [u32]>) -> Result<Vec<Vec<u32>>> {
        docs.into_iter()
            .map(|d| {
                let mut ys = self.predict(d)?;
                ys.sort_unstable();
                ys.dedup();
                Ok(ys)
            })
            .collect()
    }
}

/// Everything needed to reload a trained model: configuration and both
/// vocabularies (`model.json`) plus parameters (`checkpoint.bin`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub labels: LabelVocabulary,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const META_FILE: &str = "model.json";

pub fn save_model<F: Real>(dir: &Path, meta: &ModelMeta, model: &Model<F>) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(model.params(), &dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Loads a saved model. `checkpoint` may point at the parameter file or at
/// the directory holding it; `model.json` is read from the same directory.
pub fn load_model<F: Real>(checkpoint: &Path) -> Result<(ModelMeta, Model<F>, Precision)> {
    let (dir, file) = if checkpoint.is_dir() {
        (checkpoint.to_path_buf(), checkpoint.join(CHECKPOINT_FILE))
    } else {
        let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, checkpoint.to_path_buf())
    };
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    if meta.config.vocab_size != meta.vocab.len() || meta.config.labels != meta.labels.len() {
        return Err(Error::Model(
            "model.json vocabulary sizes disagree with its configuration".into(),
        ));
    }
    let (precision, params) = checkpoint::load::<F>(&file)?;
    let model = Model::with_params(meta.config.clone(), params)?;
    Ok((meta, model, precision))
}
