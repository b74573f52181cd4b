//! Hybrid graph encoder: a local GINE branch and a global token-graph
//! transformer whose outputs are stacked row-wise, plus the two pretraining
//! heads (functional-group prediction and SELFIES reconstruction).

use moldiff_chem::{MolecularGraph, SelfiesSequence, SelfiesToken, NUM_GROUPS};
use moldiff_numerics::layers::{sinusoidal_positions, Activation, Ctx, LayerNorm, Linear, Mlp, TransformerBlock};
use moldiff_numerics::{init, ParameterStore, SeedStream, Tensor, Var};
use rand::Rng;

use crate::config::EncoderConfig;
use crate::error::{CoreError, Result};

/// How the global branch obtains node identifiers.
#[derive(Debug, Clone, Copy)]
pub enum NodeIds<'a> {
    /// Fixed identifiers determined by the atom count.
    Eval,
    /// Fresh identifiers drawn from this seed.
    Sample(u64),
    /// Caller-supplied `|V| × id_dim` matrix with orthonormal rows.
    Given(&'a Tensor),
}

const EVAL_ID_SEED: u64 = 0x1d50_f9a7;

/// `n × dim` matrix with orthonormal rows (Gram-Schmidt, two passes).
pub fn orthonormal_ids(n: usize, dim: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if n > dim {
        return Err(CoreError::InvalidArgument(format!("{n} atoms exceed the identifier width {dim}")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = init::normal(rng, &[dim], 0.0, 1.0).into_data();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    Ok(Tensor::from_rows(&rows)?.reshape(&[n, dim])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    GraphGine,
    NodeGine,
    GraphGt,
    NodeGt,
    EdgeGt,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::GraphGine => "h_g^GINE",
            Segment::NodeGine => "H_v^GINE",
            Segment::GraphGt => "h_g^GT",
            Segment::NodeGt => "H_v^GT",
            Segment::EdgeGt => "H_e^GT",
        }
    }
}

/// Row-stacked branch outputs: `[h_g^GINE; H_v^GINE; h_g^GT; H_v^GT; H_e^GT]`.
#[derive(Debug, Clone, Copy)]
pub struct HybridEmbedding<'t> {
    pub rows: Var<'t>,
    pub n_atoms: usize,
    pub n_bonds: usize,
}

impl<'t> HybridEmbedding<'t> {
    /// Row ranges of each segment, in order.
    pub fn segments(&self) -> [(Segment, std::ops::Range<usize>); 5] {
        let (n, m) = (self.n_atoms, self.n_bonds);
        [
            (Segment::GraphGine, 0..1),
            (Segment::NodeGine, 1..1 + n),
            (Segment::GraphGt, 1 + n..2 + n),
            (Segment::NodeGt, 2 + n..2 + 2 * n),
            (Segment::EdgeGt, 2 + 2 * n..2 + 2 * n + m),
        ]
    }

    pub fn segment_of(&self, row: usize) -> Option<Segment> {
        self.segments().into_iter().find(|(_, r)| r.contains(&row)).map(|(s, _)| s)
    }

    pub fn len(&self) -> usize {
        2 * self.n_atoms + self.n_bonds + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn hybrid_concat<'t>(gine: (Var<'t>, Var<'t>), gt: (Var<'t>, Var<'t>, Var<'t>)) -> Result<HybridEmbedding<'t>> {
    let (hg, hv) = gine;
    let (tg, tv, te) = gt;
    let w = hg.cols();
    if [hv.cols(), tg.cols(), tv.cols(), te.cols()].iter().any(|&c| c != w) {
        return Err(CoreError::InvalidArgument("branch outputs differ in width".into()));
    }
    if hg.rows() != 1 || tg.rows() != 1 || hv.rows() != tv.rows() {
        return Err(CoreError::InvalidArgument("branch outputs disagree on row counts".into()));
    }
    let rows = hg.tape().concat_rows(&[hg, hv, tg, tv, te])?;
    Ok(HybridEmbedding { rows, n_atoms: hv.rows(), n_bonds: te.rows() })
}

fn atom_ids(g: &MolecularGraph) -> Vec<usize> {
    g.atoms().iter().map(|e| e.index()).collect()
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    cfg: EncoderConfig,
    gine_mlps: Vec<Mlp>,
    gt_id: Linear,
    gt_blocks: Vec<TransformerBlock>,
    gt_ln: LayerNorm,
}

impl GraphEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.d_g;
        Self {
            cfg: cfg.clone(),
            gine_mlps: (0..cfg.gine_layers).map(|l| Mlp::new(&format!("encoder.gine.{l}.mlp"), &[d, d, d], Activation::Relu)).collect(),
            gt_id: Linear::new("encoder.gt.id", 2 * cfg.id_dim, d, false),
            gt_blocks: (0..cfg.gt_layers)
                .map(|l| TransformerBlock::new(&format!("encoder.gt.block.{l}"), d, cfg.gt_heads, 2 * d))
                .collect(),
            gt_ln: LayerNorm::new("encoder.gt.ln", d),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        let d = self.cfg.d_g;
        let std = 1.0 / (d as f64).sqrt();
        store.insert("encoder.gine.atom", init::normal(rng, &[self.cfg.atom_types, d], 0.0, 1.0))?;
        for (l, mlp) in self.gine_mlps.iter().enumerate() {
            store.insert(format!("encoder.gine.{l}.bond"), init::normal(rng, &[self.cfg.bond_types, d], 0.0, std))?;
            mlp.init(store, rng)?;
        }
        store.insert("encoder.gt.atom", init::normal(rng, &[self.cfg.atom_types, d], 0.0, 1.0))?;
        store.insert("encoder.gt.bond", init::normal(rng, &[self.cfg.bond_types, d], 0.0, 1.0))?;
        store.insert("encoder.gt.type", init::normal(rng, &[3, d], 0.0, 1.0))?;
        store.insert("encoder.gt.graph", init::normal(rng, &[1, d], 0.0, 1.0))?;
        self.gt_id.init(store, rng)?;
        for b in &self.gt_blocks {
            b.init(store, rng)?;
        }
        self.gt_ln.init(store)?;
        Ok(())
    }

    /// Local branch: `L` rounds of `h_v ← MLP(h_v + Σ_u ReLU(h_u + e_uv))`.
    pub fn gine_forward<'t>(&self, cx: &Ctx<'t>, g: &MolecularGraph) -> Result<(Var<'t>, Var<'t>)> {
        if g.is_empty() {
            return Err(CoreError::Empty("graph has no atoms".into()));
        }
        let n = g.num_atoms();
        let mut src = Vec::with_capacity(2 * g.num_bonds());
        let mut dst = Vec::with_capacity(2 * g.num_bonds());
        let mut orders = Vec::with_capacity(2 * g.num_bonds());
        for b in g.bonds() {
            src.extend([b.u, b.v]);
            dst.extend([b.v, b.u]);
            orders.extend([b.order as usize - 1; 2]);
        }
        let mut h = cx.tape.gather(cx.p("encoder.gine.atom")?, &atom_ids(g))?;
        for (l, mlp) in self.gine_mlps.iter().enumerate() {
            let e = cx.tape.gather(cx.p(&format!("encoder.gine.{l}.bond"))?, &orders)?;
            let msg = cx.tape.gather(h, &src)?.add(e)?.relu();
            let agg = cx.tape.scatter_add_rows(msg, &dst, n)?;
            h = mlp.forward(cx, h.add(agg)?)?;
        }
        Ok((h.mean_rows()?, h))
    }

    pub fn node_ids(&self, n: usize, ids: NodeIds<'_>) -> Result<Tensor> {
        let dim = self.cfg.id_dim;
        let p = match ids {
            NodeIds::Eval => orthonormal_ids(n, dim, &mut SeedStream::new(EVAL_ID_SEED).index(n as u64).rng())?,
            NodeIds::Sample(seed) => orthonormal_ids(n, dim, &mut SeedStream::new(seed).rng_for("node-ids"))?,
            NodeIds::Given(p) => {
                if p.shape() != [n, dim] {
                    return Err(CoreError::InvalidArgument(format!("identifier shape {:?}, want [{n}, {dim}]", p.shape())));
                }
                p.clone()
            }
        };
        Ok(p)
    }

    /// Global branch over `[graph] ++ nodes ++ edges` tokens.
    pub fn tokengt_forward<'t>(&self, cx: &Ctx<'t>, g: &MolecularGraph, ids: NodeIds<'_>) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        if g.is_empty() {
            return Err(CoreError::Empty("graph has no atoms".into()));
        }
        let (n, m) = (g.num_atoms(), g.num_bonds());
        let dim = self.cfg.id_dim;
        let p = self.node_ids(n, ids)?;
        let mut id_rows = Vec::with_capacity((n + m) * 2 * dim);
        for v in 0..n {
            id_rows.extend_from_slice(p.row(v));
            id_rows.extend_from_slice(p.row(v));
        }
        for b in g.bonds() {
            id_rows.extend_from_slice(p.row(b.u));
            id_rows.extend_from_slice(p.row(b.v));
        }
        let ident = self.gt_id.forward(cx, cx.constant(Tensor::new(vec![n + m, 2 * dim], id_rows)?))?;
        let types = cx.p("encoder.gt.type")?;
        let node_feat = cx.tape.gather(cx.p("encoder.gt.atom")?, &atom_ids(g))?;
        let orders: Vec<usize> = g.bonds().iter().map(|b| b.order as usize - 1).collect();
        let edge_feat = cx.tape.gather(cx.p("encoder.gt.bond")?, &orders)?;
        let type_ids: Vec<usize> = std::iter::once(0).chain(std::iter::repeat_n(1, n)).chain(std::iter::repeat_n(2, m)).collect();
        let graph_tok = cx.p("encoder.gt.graph")?;
        let feats = cx.tape.concat_rows(&[graph_tok, node_feat, edge_feat])?;
        let zero_id = cx.constant(Tensor::zeros(&[1, self.cfg.d_g]));
        let ident = cx.tape.concat_rows(&[zero_id, ident])?;
        let mut x = feats.add(ident)?.add(cx.tape.gather(types, &type_ids)?)?;
        for b in &self.gt_blocks {
            x = b.forward(cx, x, None)?;
        }
        let x = self.gt_ln.forward(cx, x)?;
        Ok((x.slice_rows(0, 1)?, x.slice_rows(1, n)?, x.slice_rows(1 + n, m)?))
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, g: &MolecularGraph, ids: NodeIds<'_>) -> Result<HybridEmbedding<'t>> {
        let gine = self.gine_forward(cx, g)?;
        let gt = self.tokengt_forward(cx, g, ids)?;
        hybrid_concat(gine, gt)
    }
}

/// Three-layer perceptron on mean-pooled aligned rows, one logit per group.
#[derive(Debug, Clone)]
pub struct FuncGroupHead {
    mlp: Mlp,
}

impl FuncGroupHead {
    pub fn new(d_in: usize, hidden: usize) -> Self {
        Self { mlp: Mlp::new("pretrain.func", &[d_in, hidden, hidden, NUM_GROUPS], Activation::Relu) }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        Ok(self.mlp.init(store, rng)?)
    }

    pub fn logits<'t>(&self, cx: &Ctx<'t>, h_aligned: Var<'t>) -> Result<Var<'t>> {
        Ok(self.mlp.forward(cx, h_aligned.mean_rows()?)?)
    }
}

/// `Σ_k BCE(σ(f(mean H)), y_k)`.
pub fn func_group_loss<'t>(cx: &Ctx<'t>, h_aligned: Var<'t>, y: &[bool; NUM_GROUPS], head: &FuncGroupHead) -> Result<Var<'t>> {
    let targets: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
    Ok(head.logits(cx, h_aligned)?.bce_with_logits(&targets)?)
}

/// Number of output classes of the reconstruction decoder: the dialect.
pub const RECON_VOCAB: usize = moldiff_chem::selfies::ALPHABET_SIZE;
const RECON_BOS: usize = RECON_VOCAB;

/// Small causal decoder that reads the aligned rows as a visible prefix and
/// predicts dialect tokens left to right.
#[derive(Debug, Clone)]
pub struct ReconDecoder {
    proj: Linear,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    out: Linear,
    width: usize,
    max_len: usize,
}

impl ReconDecoder {
    pub fn new(d_in: usize, width: usize, layers: usize, heads: usize, max_len: usize) -> Self {
        Self {
            proj: Linear::new("pretrain.recon.proj", d_in, width, true),
            blocks: (0..layers).map(|l| TransformerBlock::new(&format!("pretrain.recon.block.{l}"), width, heads, 2 * width)).collect(),
            ln: LayerNorm::new("pretrain.recon.ln", width),
            out: Linear::new("pretrain.recon.out", width, RECON_VOCAB, true),
            width,
            max_len,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        self.proj.init(store, rng)?;
        store.insert("pretrain.recon.embed", init::normal(rng, &[RECON_VOCAB + 1, self.width], 0.0, 1.0))?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.ln.init(store)?;
        self.out.init(store, rng)?;
        Ok(())
    }

    /// Logits for every position of `s` (row i predicts `s_i` from `s_<i`).
    pub fn logits<'t>(&self, cx: &Ctx<'t>, h_aligned: Var<'t>, s: &SelfiesSequence) -> Result<Var<'t>> {
        let len = s.len();
        if len == 0 {
            return Err(CoreError::Empty("reconstruction target is empty".into()));
        }
        if len > self.max_len {
            return Err(CoreError::ContextOverflow { len, max: self.max_len });
        }
        let prefix = self.proj.forward(cx, h_aligned)?;
        let np = prefix.rows();
        let mut inputs = vec![RECON_BOS];
        inputs.extend(s.tokens()[..len - 1].iter().map(|t| t.dialect_id()));
        let tok = cx.tape.gather(cx.p("pretrain.recon.embed")?, &inputs)?;
        let tok = tok.add(cx.constant(sinusoidal_positions(len, self.width)))?;
        let mut x = cx.tape.concat_rows(&[prefix, tok])?;
        let total = np + len;
        let mut mask = vec![false; total * total];
        for i in 0..total {
            for j in 0..total {
                mask[i * total + j] = j < np || (i >= np && j <= i);
            }
        }
        for b in &self.blocks {
            x = b.forward(cx, x, Some(&mask))?;
        }
        let x = self.ln.forward(cx, x)?.slice_rows(np, len)?;
        Ok(self.out.forward(cx, x)?)
    }
}

/// `−Σ_i log π(s_i | H_aligned, s_<i)`.
pub fn recon_loss<'t>(cx: &Ctx<'t>, h_aligned: Var<'t>, s: &SelfiesSequence, decoder: &ReconDecoder) -> Result<Var<'t>> {
    let logits = decoder.logits(cx, h_aligned, s)?;
    let targets: Vec<usize> = s.tokens().iter().map(|t: &SelfiesToken| t.dialect_id()).collect();
    Ok(logits.cross_entropy(&targets, &vec![1.0; targets.len()])?)
}
