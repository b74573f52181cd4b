//! Finite-difference checks for every differentiable primitive, alone and
//! composed.

use moldiff_numerics::layers::{Activation, Ctx, FeedForward, LayerNorm, Linear, Mlp, MultiHeadAttention, TransformerBlock};
use moldiff_numerics::{grad_check, init, ParameterStore, Result, SeedStream, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn store_with(entries: &[(&str, &[usize])], seed: u64) -> ParameterStore {
    let mut rng = SeedStream::new(seed).rng();
    let mut s = ParameterStore::new();
    for (name, shape) in entries {
        s.insert(*name, init::normal(&mut rng, shape, 0.0, 0.7)).unwrap();
    }
    s
}

fn check<F>(f: F, store: &ParameterStore, samples: usize)
where
    F: for<'t> Fn(&'t Tape, &'t ParameterStore) -> Result<Var<'t>>,
{
    let r = grad_check(f, store, EPS, samples, 3).unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}

fn weights(n: usize) -> Tensor {
    let v: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
    Tensor::new(vec![1, n], v).unwrap()
}

/// Reduces any matrix to a scalar with fixed, asymmetric weights.
fn reduce<'t>(tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
    let w = tape.constant(weights(x.rows() * x.cols()).reshape(&[x.rows(), x.cols()])?);
    Ok(x.mul(w)?.sum())
}

#[test]
fn elementwise_ops() {
    let store = store_with(&[("a", &[3, 4]), ("b", &[3, 4])], 1);
    check(
        |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let x = a.mul(b)?.add(a.tanh())?.sub(b.sigmoid())?;
            let y = x.gelu().add(a.softplus())?.add(b.abs().scale(0.3))?.add(a.min(b)?)?;
            reduce(t, y.add_scalar(0.25))
        },
        &store,
        24,
    );
}

#[test]
fn matmul_variants_and_rows() {
    let store = store_with(&[("a", &[3, 4]), ("b", &[4, 5]), ("c", &[2, 4]), ("r", &[1, 5])], 2);
    check(
        |t, s| {
            let a = t.param(s, "a")?;
            let y = a.matmul(t.param(s, "b")?)?.add_row(t.param(s, "r")?)?;
            let z = a.matmul_t(t.param(s, "c")?)?;
            let cat = t.concat_rows(&[y.slice_rows(1, 2)?, y])?;
            let m = cat.mean_rows()?;
            reduce(t, m)?.add(reduce(t, z)?)
        },
        &store,
        40,
    );
}

#[test]
fn softmax_log_softmax_layer_norm() {
    let store = store_with(&[("x", &[3, 6]), ("g", &[1, 6]), ("b", &[1, 6])], 3);
    check(
        |t, s| {
            let x = t.param(s, "x")?;
            let y = x.softmax_rows();
            let z = x.log_softmax_rows();
            let n = x.layer_norm(t.param(s, "g")?, t.param(s, "b")?, 1e-5)?;
            reduce(t, y)?.add(reduce(t, z)?)?.add(reduce(t, n)?)
        },
        &store,
        40,
    );
}

#[test]
fn gather_scatter() {
    let store = store_with(&[("table", &[5, 3])], 4);
    check(
        |t, s| {
            let table = t.param(s, "table")?;
            let g = t.gather(table, &[4, 0, 4, 2])?;
            let sc = t.scatter_add_rows(g.relu(), &[1, 1, 0, 2], 3)?;
            reduce(t, sc.add_scalar(0.0))
        },
        &store,
        15,
    );
}

#[test]
fn attention_masked_multihead() {
    let store = store_with(&[("q", &[3, 4]), ("k", &[5, 4]), ("v", &[5, 6])], 5);
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
    check(
        move |t, s| {
            let out = t.attention(t.param(s, "q")?, t.param(s, "k")?, t.param(s, "v")?, 2, Some(&mask))?;
            reduce(t, out)
        },
        &store,
        47,
    );
}

#[test]
fn losses() {
    let store = store_with(&[("l", &[4, 5])], 6);
    check(
        |t, s| {
            let l = t.param(s, "l")?;
            let ce = l.cross_entropy(&[0, 3, 4, 1], &[1.0, 0.0, 2.5, 0.5])?;
            let bce = l.slice_rows(0, 1)?.bce_with_logits(&[1.0, 0.0, 0.0, 1.0, 1.0])?;
            ce.add(bce)
        },
        &store,
        20,
    );
}

#[test]
fn layers_composed() {
    let mut store = ParameterStore::new();
    let mut rng = SeedStream::new(9).rng();
    let lin = Linear::new("lin", 4, 8, true);
    let ln = LayerNorm::new("ln", 8);
    let mlp = Mlp::new("mlp", &[8, 8, 8, 3], Activation::Gelu);
    let attn = MultiHeadAttention::new("attn", 8, 8, 2);
    let kv_only = MultiHeadAttention::key_value_only("kv", 8, 8, 4);
    let ffn = FeedForward::new("ffn", 8, 16);
    let block = TransformerBlock::new("block", 8, 2, 16);
    lin.init(&mut store, &mut rng).unwrap();
    ln.init(&mut store).unwrap();
    mlp.init(&mut store, &mut rng).unwrap();
    attn.init(&mut store, &mut rng).unwrap();
    kv_only.init(&mut store, &mut rng).unwrap();
    ffn.init(&mut store, &mut rng).unwrap();
    block.init(&mut store, &mut rng).unwrap();
    // Perturb LN parameters away from 1/0 so their gradients are generic.
    for name in ["ln.gamma", "ln.beta"] {
        let t = init::normal(&mut rng, &[1, 8], 0.5, 0.3);
        store.set(name, t).unwrap();
    }
    store.insert("x", init::normal(&mut rng, &[5, 4], 0.0, 1.0)).unwrap();
    let causal: Vec<bool> = (0..25).map(|i| i % 5 <= i / 5).collect();
    check(
        move |t, s| {
            let cx = Ctx::new(t, s);
            let x = lin.forward(&cx, cx.p("x")?)?;
            let x = ln.forward(&cx, x)?;
            let x = attn.forward(&cx, x, x, Some(&causal))?;
            let x = kv_only.forward(&cx, x, x, None)?;
            let x = ffn.forward(&cx, x)?;
            let x = block.forward(&cx, x, None)?;
            let y = mlp.forward(&cx, x)?;
            reduce(t, y)
        },
        &store,
        200,
    );
}
