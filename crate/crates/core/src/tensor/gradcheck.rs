use super::{Graph, Result, Tensor, Var};

/// Largest relative discrepancy between the analytic gradient of a scalar
/// function and its central finite difference, over every coordinate of `x`.
///
/// Per coordinate the error is `|a - n| / max(|a|, |n|, 1e-8)`. A failing
/// evaluation or a non-finite value reports `f64::INFINITY`.
pub fn grad_check<Fun>(f: Fun, x: &Tensor<f64>, eps: f64) -> f64
where
    Fun: for<'g> Fn(&mut Graph<'g, f64>, Var) -> Result<Var>,
{
    grad_check_with(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_with<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    Fun: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Option<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone(), false)).collect();
        let out = f(&mut g, &vars).ok()?;
        let v = g.value(out);
        (v.numel() == 1).then(|| v.data()[0])
    };

    let analytic: Vec<Tensor<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone(), true)).collect();
        let Ok(out) = f(&mut g, &vars) else {
            return f64::INFINITY;
        };
        if g.backward(out).is_err() {
            return f64::INFINITY;
        }
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let plus = eval(&probe);
            probe[t].data_mut()[i] = orig - eps;
            let minus = eval(&probe);
            probe[t].data_mut()[i] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                return f64::INFINITY;
            };
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return f64::INFINITY;
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

/// Worst [`grad_check`] error per primitive over `seeds` random draws.
///
/// Each primitive's output is contracted against a fixed random weighting
/// so that the scalar under test has non-degenerate gradients (a plain sum
/// of softmax outputs, for instance, is constant).
pub fn primitive_grad_errors(seeds: u64) -> Vec<(&'static str, f64)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Case = (
        &'static str,
        Vec<Vec<usize>>,
        fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
    );

    fn weighted<'g>(g: &mut Graph<'g, f64>, y: Var) -> Result<Var> {
        // deterministic pseudo-random weights derived from position
        let shape = g.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 113) as f64 / 113.0) - 0.4).collect();
        let w = g.constant(Tensor::new(shape, w)?);
        let prod = g.mul(y, w)?;
        Ok(g.sum(prod))
    }

    let cases: Vec<Case> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted(g, y)
        }),
        ("transpose", vec![vec![3, 4]], |g, v| {
            let y = g.transpose(v[0])?;
            weighted(g, y)
        }),
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted(g, y)
        }),
        ("add_bias", vec![vec![3, 4], vec![4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted(g, y)
        }),
        ("sub", vec![vec![3, 4], vec![3, 4]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted(g, y)
        }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted(g, y)
        }),
        ("scale", vec![vec![2, 5]], |g, v| {
            let y = g.scale(v[0], -1.7);
            weighted(g, y)
        }),
        ("sum", vec![vec![2, 5]], |g, v| {
            let y = g.sum(v[0]);
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        }),
        ("concat", vec![vec![2, 3], vec![2, 2], vec![1, 5]], |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let y = g.concat(&[c, v[2]], 0)?;
            weighted(g, y)
        }),
        ("slice", vec![vec![4, 6]], |g, v| {
            let a = g.slice(v[0], 1, 2, 3)?;
            let y = g.slice(a, 0, 1, 2)?;
            weighted(g, y)
        }),
        ("tanh", vec![vec![3, 4]], |g, v| {
            let y = g.tanh(v[0]);
            weighted(g, y)
        }),
        ("sigmoid", vec![vec![3, 4]], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted(g, y)
        }),
        ("relu", vec![vec![3, 4]], |g, v| {
            let y = g.relu(v[0]);
            weighted(g, y)
        }),
        ("softmax", vec![vec![3, 4]], |g, v| {
            let a = g.softmax(v[0], 1)?;
            let b = g.softmax(v[0], 0)?;
            let y = g.add(a, b)?;
            weighted(g, y)
        }),
        ("embedding_lookup", vec![vec![5, 3]], |g, v| {
            let y = g.embedding(v[0], &[4, 0, 4, 2])?;
            weighted(g, y)
        }),
        ("dilated_conv1d", vec![vec![9, 3], vec![3, 3, 2]], |g, v| {
            let y = g.dilated_conv1d(v[0], v[1], 2)?;
            weighted(g, y)
        }),
        ("cross_entropy", vec![vec![3, 5]], |g, v| {
            g.cross_entropy(v[0], &[1, 4, 0])
        }),
    ];

    cases
        .into_iter()
        .map(|(name, shapes, f)| {
            let worst = (0..seeds)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let inputs: Vec<Tensor<f64>> = shapes
                        .iter()
                        .map(|s| {
                            let n = s.iter().product();
                            Tensor::new(s.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                                .expect("valid shape")
                        })
                        .collect();
                    grad_check_with(f, &inputs, 1e-6)
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
