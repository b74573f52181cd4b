//! Query projector: a fixed bank of learned queries cross-attends to the
//! hybrid graph rows and yields `N_q` soft tokens in the language-model width.

use moldiff_numerics::layers::{Ctx, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use moldiff_numerics::{init, ParameterStore, Var};
use rand::Rng;

use crate::config::AlignerConfig;
use crate::encoder::HybridEmbedding;
use crate::error::{CoreError, Result};

pub const QUERIES: &str = "aligner.queries";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Chosen,
    Rejected,
}

#[derive(Debug, Clone, Copy)]
pub struct AlignedEmbedding<'t> {
    pub rows: Var<'t>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
struct Layer {
    self_attn: Option<(MultiHeadAttention, LayerNorm)>,
    cross: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct QFormer {
    n_q: usize,
    d: usize,
    input: Linear,
    layers: Vec<Layer>,
}

impl QFormer {
    /// `d_g` is the encoder width, `d` the language-model width.
    pub fn new(cfg: &AlignerConfig, d_g: usize, d: usize) -> Self {
        let layers = (0..cfg.depth)
            .map(|i| {
                let p = format!("aligner.{i}");
                Layer {
                    self_attn: (cfg.depth >= 2)
                        .then(|| (MultiHeadAttention::new(&format!("{p}.self"), d, d, cfg.heads), LayerNorm::new(&format!("{p}.ln0"), d))),
                    cross: MultiHeadAttention::key_value_only(&format!("{p}.cross"), d, d, cfg.heads),
                    ln1: LayerNorm::new(&format!("{p}.ln1"), d),
                    ffn: FeedForward::new(&format!("{p}.ffn"), d, 2 * d),
                    ln2: LayerNorm::new(&format!("{p}.ln2"), d),
                }
            })
            .collect();
        Self { n_q: cfg.n_q, d, input: Linear::new("aligner.in", d_g, d, true), layers }
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.input.init(store, rng)?;
        store.insert(QUERIES, init::normal(rng, &[self.n_q, self.d], 0.0, 1.0))?;
        for l in &self.layers {
            if let Some((attn, ln)) = &l.self_attn {
                attn.init(store, rng)?;
                ln.init(store)?;
            }
            l.cross.init(store, rng)?;
            l.ln1.init(store)?;
            l.ffn.init(store, rng)?;
            l.ln2.init(store)?;
        }
        Ok(())
    }

    /// Names of every parameter owned by the projector.
    pub fn prefix(&self) -> &'static str {
        "aligner."
    }

    /// Per layer: `X = LN(Q + softmax(Q (H W_K)ᵀ/√d_k)(H W_V))`, then
    /// `Q ← LN(X + FFN(X))`.
    pub fn forward<'t>(&self, cx: &Ctx<'t>, hybrid: &HybridEmbedding<'t>, provenance: Provenance) -> Result<AlignedEmbedding<'t>> {
        self.forward_rows(cx, hybrid.rows, provenance)
    }

    pub fn forward_rows<'t>(&self, cx: &Ctx<'t>, rows: Var<'t>, provenance: Provenance) -> Result<AlignedEmbedding<'t>> {
        if rows.rows() == 0 {
            return Err(CoreError::Empty("hybrid embedding has no rows".into()));
        }
        let h = self.input.forward(cx, rows)?;
        let mut q = cx.p(QUERIES)?;
        for l in &self.layers {
            if let Some((attn, ln)) = &l.self_attn {
                q = ln.forward(cx, q.add(attn.forward(cx, q, q, None)?)?)?;
            }
            let a = l.cross.forward(cx, q, h, None)?;
            let x = l.ln1.forward(cx, q.add(a)?)?;
            q = l.ln2.forward(cx, x.add(l.ffn.forward(cx, x)?)?)?;
        }
        Ok(AlignedEmbedding { rows: q, provenance })
    }
}
