//! Bidirectional LSTM encoder and the fixed-boundary hierarchical encoder.

use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, TensorError, Var};
use crate::{Error, Result};

/// One LSTM direction. Gates are packed column-wise in the order
/// input, forget, output, candidate: `w_input` is `[D, 4H]`, `w_hidden` is
/// `[H, 4H]`, `bias` is `[4H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

/// [`LstmParams`] as registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParamIds {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl LstmParamIds {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
        scale: f64,
    ) -> Self {
        Self {
            w_input: store.insert(
                format!("{prefix}.w_input"),
                uniform(&[input_dim, 4 * hidden], rng, scale),
            ),
            w_hidden: store.insert(format!("{prefix}.w_hidden"), uniform(&[hidden, 4 * hidden], rng, scale)),
            bias: store.insert(format!("{prefix}.bias"), uniform(&[4 * hidden], rng, scale)),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> LstmParams {
        LstmParams {
            w_input: vars[self.w_input.index()],
            w_hidden: vars[self.w_hidden.index()],
            bias: vars[self.bias.index()],
        }
    }
}

/// Uniform initialisation in `[-scale, scale]`.
pub fn uniform<F: Real>(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            F::of(if scale > 0.0 {
                rng.gen_range(-scale..=scale)
            } else {
                0.0
            })
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

impl LstmParams {
    /// (input dim, hidden dim)
    pub fn dims<F: Real>(&self, g: &Graph<'_, F>) -> (usize, usize) {
        let s = g.shape(self.w_hidden);
        (g.shape(self.w_input)[0], s[0])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<F: Real>(g: &mut Graph<'_, F>, hidden: usize) -> Self {
        let h = g.constant(Tensor::zeros(&[1, hidden]));
        let c = g.constant(Tensor::zeros(&[1, hidden]));
        Self { h, c }
    }
}

/// One step given the precomputed input projection `x W_input + bias`
/// (`[1, 4H]`).
pub fn lstm_step<F: Real>(g: &mut Graph<'_, F>, projected: Var, state: LstmState, p: &LstmParams) -> Result<LstmState> {
    let hidden = g.shape(p.w_hidden)[0];
    let recur = g.matmul(state.h, p.w_hidden)?;
    let z = g.add(projected, recur)?;
    let gates = g.slice(z, 1, 0, 3 * hidden)?;
    let gates = g.sigmoid(gates);
    let cand = g.slice(z, 1, 3 * hidden, hidden)?;
    let cand = g.tanh(cand);
    let i = g.slice(gates, 1, 0, hidden)?;
    let f = g.slice(gates, 1, hidden, hidden)?;
    let o = g.slice(gates, 1, 2 * hidden, hidden)?;
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c);
    let h = g.mul(o, squashed)?;
    Ok(LstmState { h, c })
}

/// Hidden outputs (in position order) and the final state of one pass.
#[derive(Debug, Clone)]
pub struct LstmRun {
    pub outputs: Vec<Var>,
    pub last: LstmState,
}

/// Runs an LSTM over the rows of `inputs` (`[n, D]`) from a zero state,
/// right-to-left when `reverse` is set.
pub fn lstm_run<F: Real>(g: &mut Graph<'_, F>, inputs: Var, p: &LstmParams, reverse: bool) -> Result<LstmRun> {
    let (in_dim, hidden) = p.dims(g);
    let shape = g.shape(inputs).to_vec();
    if shape.len() != 2 || shape[1] != in_dim {
        return Err(TensorError::ShapeMismatch {
            op: "lstm",
            lhs: shape,
            rhs: g.shape(p.w_input).to_vec(),
        }
        .into());
    }
    let n = shape[0];
    let proj = g.matmul(inputs, p.w_input)?;
    let proj = g.add(proj, p.bias)?;
    let mut state = LstmState::zeros(g, hidden);
    let mut outputs = Vec::with_capacity(n);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let row = g.row(proj, t)?;
        state = lstm_step(g, row, state, p)?;
        outputs.push(state.h);
    }
    if reverse {
        outputs.reverse();
    }
    Ok(LstmRun { outputs, last: state })
}

/// Source annotations `h_i = [fwd_i ; bwd_i]`.
#[derive(Debug, Clone)]
pub struct Annotations {
    /// `[n, 2H]`
    pub states: Var,
    pub forward_final: LstmState,
    pub backward_final: LstmState,
    pub len: usize,
}

pub fn bilstm_encode<F: Real>(
    g: &mut Graph<'_, F>,
    ids: &[u32],
    embedding: Var,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Annotations> {
    if ids.is_empty() {
        return Err(Error::Model("cannot encode an empty sequence".into()));
    }
    let embed_dim = g.shape(embedding)[1];
    for p in [fwd, bwd] {
        let (d, _) = p.dims(g);
        if d != embed_dim {
            return Err(TensorError::ShapeMismatch {
                op: "bilstm_encode",
                lhs: g.shape(embedding).to_vec(),
                rhs: g.shape(p.w_input).to_vec(),
            }
            .into());
        }
    }
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let x = g.embedding(embedding, &idx)?;
    let f = lstm_run(g, x, fwd, false)?;
    let b = lstm_run(g, x, bwd, true)?;
    let f_states = g.concat(&f.outputs, 0)?;
    let b_states = g.concat(&b.outputs, 0)?;
    let states = g.concat(&[f_states, b_states], 1)?;
    Ok(Annotations {
        states,
        forward_final: f.last,
        backward_final: b.last,
        len: ids.len(),
    })
}

/// Zero-based annotation positions that close each `boundary`-word segment,
/// including a trailing partial segment.
pub fn hier_positions(n: usize, boundary: usize) -> Vec<usize> {
    let mut pos: Vec<usize> = (1..=n / boundary).map(|k| k * boundary - 1).collect();
    if n % boundary != 0 {
        pos.push(n - 1);
    }
    pos
}

/// Sentence-level representations: the annotations at segment ends, fed
/// through a unidirectional LSTM. Returns `[ceil(n / boundary), H]`.
pub fn hier_encode<F: Real>(g: &mut Graph<'_, F>, ann: &Annotations, boundary: usize, top: &LstmParams) -> Result<Var> {
    if boundary == 0 {
        return Err(Error::Model("hierarchical boundary must be at least 1".into()));
    }
    let rows: Vec<Var> = hier_positions(ann.len, boundary)
        .into_iter()
        .map(|p| g.row(ann.states, p))
        .collect::<std::result::Result<_, _>>()?;
    let selected = g.concat(&rows, 0)?;
    let run = lstm_run(g, selected, top, false)?;
    Ok(g.concat(&run.outputs, 0)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    struct Fixture {
        store: ParamStore<f64>,
        embed: ParamId,
        fwd: LstmParamIds,
        bwd: LstmParamIds,
        top: LstmParamIds,
    }

    fn fixture(vocab: usize, dim: usize, hidden: usize, scale: f64, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embed = store.insert("embed", uniform(&[vocab, dim], &mut rng, scale.max(0.5)));
        let fwd = LstmParamIds::register(&mut store, "fwd", dim, hidden, &mut rng, scale);
        let bwd = LstmParamIds::register(&mut store, "bwd", dim, hidden, &mut rng, scale);
        let top = LstmParamIds::register(&mut store, "top", 2 * hidden, hidden, &mut rng, scale);
        Fixture {
            store,
            embed,
            fwd,
            bwd,
            top,
        }
    }

    fn bind<'p>(g: &mut Graph<'p, f64>, store: &'p ParamStore<f64>) -> Vec<Var> {
        store.ids().map(|id| g.leaf_ref(store.get(id), false)).collect()
    }

    #[test]
    fn zero_parameters_give_zero_annotations() {
        let fx = fixture(10, 4, 3, 0.0, 1);
        let mut g = Graph::new();
        let vars = bind(&mut g, &fx.store);
        let ann = bilstm_encode(
            &mut g,
            &[5, 6, 7],
            vars[fx.embed.index()],
            &fx.fwd.bind(&vars),
            &fx.bwd.bind(&vars),
        )
        .unwrap();
        assert!(g.value(ann.states).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn annotation_shape() {
        let fx = fixture(20, 8, 32, 0.08, 2);
        let mut g = Graph::new();
        let vars = bind(&mut g, &fx.store);
        let ann = bilstm_encode(
            &mut g,
            &[1, 2, 3, 4, 5, 6, 7],
            vars[fx.embed.index()],
            &fx.fwd.bind(&vars),
            &fx.bwd.bind(&vars),
        )
        .unwrap();
        assert_eq!(g.shape(ann.states), &[7, 64]);
        assert_eq!(ann.len, 7);
    }

    #[test]
    fn reversal_symmetry() {
        let fx = fixture(12, 5, 4, 0.3, 3);
        let seq = [3u32, 9, 1, 7, 4];
        let rev: Vec<u32> = seq.iter().rev().copied().collect();
        let mut g = Graph::new();
        let vars = bind(&mut g, &fx.store);
        let e = vars[fx.embed.index()];
        let (f, b) = (fx.fwd.bind(&vars), fx.bwd.bind(&vars));
        let a = bilstm_encode(&mut g, &seq, e, &f, &b).unwrap();
        let r = bilstm_encode(&mut g, &rev, e, &b, &f).unwrap();
        let (av, rv) = (g.value(a.states), g.value(r.states));
        let h = 4;
        for i in 0..5 {
            let ar = av.row_slice(i);
            let rr = rv.row_slice(4 - i);
            assert_eq!(&ar[..h], &rr[h..]);
            assert_eq!(&ar[h..], &rr[..h]);
        }
    }

    #[test]
    fn hidden_states_are_bounded() {
        let fx = fixture(12, 5, 4, 3.0, 4);
        let mut g = Graph::new();
        let vars = bind(&mut g, &fx.store);
        let ann = bilstm_encode(
            &mut g,
            &[1, 2, 3, 4, 5, 6, 7, 8],
            vars[fx.embed.index()],
            &fx.fwd.bind(&vars),
            &fx.bwd.bind(&vars),
        )
        .unwrap();
        assert!(g.value(ann.states).data().iter().all(|&x| x > -1.0 && x < 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let embed = store.insert("embed", uniform(&[10, 6], &mut rng, 0.1));
        let fwd = LstmParamIds::register(&mut store, "fwd", 4, 3, &mut rng, 0.1);
        let mut g = Graph::new();
        let vars = bind(&mut g, &store);
        let p = fwd.bind(&vars);
        assert!(bilstm_encode(&mut g, &[1, 2], vars[embed.index()], &p, &p).is_err());
    }

    #[test]
    fn hier_boundaries() {
        assert_eq!(hier_positions(12, 5), vec![4, 9, 11]);
        assert_eq!(hier_positions(5, 5), vec![4]);
        assert_eq!(hier_positions(3, 5), vec![2]);
        for n in 1..40 {
            for b in 1..9 {
                assert_eq!(hier_positions(n, b).len(), n.div_ceil(b));
            }
        }
    }

    #[test]
    fn hier_encode_output_length() {
        let fx = fixture(20, 4, 3, 0.2, 5);
        let mut g = Graph::new();
        let vars = bind(&mut g, &fx.store);
        let ids: Vec<u32> = (0..12).map(|i| (i % 19) as u32 + 1).collect();
        let ann = bilstm_encode(
            &mut g,
            &ids,
            vars[fx.embed.index()],
            &fx.fwd.bind(&vars),
            &fx.bwd.bind(&vars),
        )
        .unwrap();
        let top = fx.top.bind(&vars);
        let out = hier_encode(&mut g, &ann, 5, &top).unwrap();
        assert_eq!(g.shape(out), &[3, 3]);
        assert!(hier_encode(&mut g, &ann, 0, &top).is_err());
    }
}
