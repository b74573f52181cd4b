//! Parameterized layers. Each layer only stores parameter names; values live
//! in a [`ParameterStore`] and are fetched onto the tape at forward time.

use rand::Rng;

use crate::error::Result;
use crate::init;
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tape plus the store its parameters come from.
#[derive(Clone, Copy)]
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParameterStore,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParameterStore) -> Self {
        Self { tape, store }
    }

    pub fn p(&self, name: &str) -> Result<Var<'t>> {
        self.tape.param(self.store, name)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self { weight: format!("{prefix}.weight"), bias: bias.then(|| format!("{prefix}.bias")), fan_in, fan_out }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        store.insert(&self.weight, init::linear_weight(rng, self.fan_in, self.fan_out))?;
        if let Some(b) = &self.bias {
            store.insert(b, Tensor::zeros(&[1, self.fan_out]))?;
        }
        Ok(())
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(cx.p(&self.weight)?)?;
        match &self.bias {
            Some(b) => y.add_row(cx.p(b)?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
    dim: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self { gamma: format!("{prefix}.gamma"), beta: format!("{prefix}.beta"), dim }
    }

    pub fn init(&self, store: &mut ParameterStore) -> Result<()> {
        store.insert(&self.gamma, Tensor::full(&[1, self.dim], 1.0))?;
        store.insert(&self.beta, Tensor::zeros(&[1, self.dim]))
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(cx.p(&self.gamma)?, cx.p(&self.beta)?, LAYER_NORM_EPS)
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    act: Activation,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths, e.g. `[64, 64, 64, 8]`
    /// for a three-layer perceptron.
    pub fn new(prefix: &str, widths: &[usize], act: Activation) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(&format!("{prefix}.{i}"), w[0], w[1], true)).collect();
        Self { layers, act }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, mut x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(cx, x)?;
            if i < last {
                x = self.act.apply(x);
            }
        }
        Ok(x)
    }
}

/// Multi-head attention. The query and output projections are optional so
/// the same type covers the bare `softmax(Q(HW_K)ᵀ/√d_k)(HW_V)` form.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Option<Linear>,
    k: Linear,
    v: Linear,
    o: Option<Linear>,
    heads: usize,
}

impl MultiHeadAttention {
    /// Standard self/cross attention with all four projections.
    pub fn new(prefix: &str, d_model: usize, kv_in: usize, heads: usize) -> Self {
        Self {
            q: Some(Linear::new(&format!("{prefix}.q"), d_model, d_model, true)),
            // A key bias shifts every score of a query equally; softmax ignores it.
            k: Linear::new(&format!("{prefix}.k"), kv_in, d_model, false),
            v: Linear::new(&format!("{prefix}.v"), kv_in, d_model, true),
            o: Some(Linear::new(&format!("{prefix}.o"), d_model, d_model, true)),
            heads,
        }
    }

    /// Queries used as given; only keys and values are projected.
    pub fn key_value_only(prefix: &str, d_model: usize, kv_in: usize, heads: usize) -> Self {
        Self {
            q: None,
            k: Linear::new(&format!("{prefix}.k"), kv_in, d_model, false),
            v: Linear::new(&format!("{prefix}.v"), kv_in, d_model, false),
            o: None,
            heads,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        if let Some(q) = &self.q {
            q.init(store, rng)?;
        }
        self.k.init(store, rng)?;
        self.v.init(store, rng)?;
        if let Some(o) = &self.o {
            o.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, queries: Var<'t>, keys_values: Var<'t>, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let q = match &self.q {
            Some(l) => l.forward(cx, queries)?,
            None => queries,
        };
        let k = self.k.forward(cx, keys_values)?;
        let v = self.v.forward(cx, keys_values)?;
        let out = cx.tape.attention(q, k, v, self.heads, mask)?;
        match &self.o {
            Some(l) => l.forward(cx, out),
            None => Ok(out),
        }
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str, d_model: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(&format!("{prefix}.up"), d_model, hidden, true),
            down: Linear::new(&format!("{prefix}.down"), hidden, d_model, true),
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.up.init(store, rng)?;
        self.down.init(store, rng)
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.up.forward(cx, x)?.gelu();
        self.down.forward(cx, h)
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new(prefix: &str, d_model: usize, heads: usize, ffn_hidden: usize) -> Self {
        Self {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), d_model),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), d_model, d_model, heads),
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), d_model),
            ffn: FeedForward::new(&format!("{prefix}.ffn"), d_model, ffn_hidden),
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.ln1.init(store)?;
        self.attn.init(store, rng)?;
        self.ln2.init(store)?;
        self.ffn.init(store, rng)
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let h = self.ln1.forward(cx, x)?;
        let x = x.add(self.attn.forward(cx, h, h, mask)?)?;
        let h = self.ln2.forward(cx, x)?;
        x.add(self.ffn.forward(cx, h)?)
    }
}

/// Fixed sinusoidal position table, `positions × dim`.
pub fn sinusoidal_positions(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for p in 0..positions {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            data[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![positions, dim], data).expect("shape")
}
