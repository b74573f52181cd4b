//! Masked diffusion backbone: forward masking, bidirectional prediction of
//! the response region and the `1/t`-weighted reconstruction loss.

use moldiff_chem::TokenId;
use moldiff_numerics::layers::{sinusoidal_positions, Ctx, LayerNorm, TransformerBlock};
use moldiff_numerics::{init, ParameterStore, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::DlmConfig;
use crate::error::{CoreError, Result};

pub const EMBED: &str = "dlm.embed";
pub const HEAD: &str = "dlm.head";
pub const HEAD_BIAS: &str = "dlm.head_bias";
const SEGMENT: &str = "dlm.segment";

/// Input regions, in sequence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Graph = 0,
    Question = 1,
    Selfies = 2,
    Response = 3,
}

/// One training instance of the masked reconstruction objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionBatch {
    pub x0: Vec<TokenId>,
    pub t: f64,
    pub x_t: Vec<TokenId>,
    pub mask: Vec<bool>,
    pub q: Vec<TokenId>,
    pub s: Vec<TokenId>,
}

impl DiffusionBatch {
    pub fn new(x0: Vec<TokenId>, q: Vec<TokenId>, s: Vec<TokenId>, t: f64, mask_id: TokenId, rng: &mut impl Rng) -> Result<Self> {
        let (x_t, mask) = forward_mask(&x0, t, mask_id, rng)?;
        Ok(Self { x0, t, x_t, mask, q, s })
    }

    pub fn n_mask(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Draws `t ~ U(t_min, 1]`.
pub fn sample_t(rng: &mut impl Rng, t_min: f64) -> f64 {
    let u: f64 = rng.random();
    1.0 - (1.0 - t_min) * u
}

/// Replaces each position by `mask_id` independently with probability `t`.
pub fn forward_mask(x0: &[TokenId], t: f64, mask_id: TokenId, rng: &mut impl Rng) -> Result<(Vec<TokenId>, Vec<bool>)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("masking ratio {t} outside (0, 1]")));
    }
    if x0.contains(&mask_id) {
        return Err(CoreError::InvalidArgument("clean sequence contains the mask token".into()));
    }
    let mask: Vec<bool> = x0.iter().map(|_| rng.random::<f64>() < t).collect();
    let x_t = x0.iter().zip(&mask).map(|(&x, &m)| if m { mask_id } else { x }).collect();
    Ok((x_t, mask))
}

/// `(1/t) Σ_{masked i} −log softmax(logits_i)[x0_i]`.
pub fn dlm_loss<'t>(logits: Var<'t>, x0: &[TokenId], mask: &[bool], t: f64) -> Result<Var<'t>> {
    if mask.len() != x0.len() {
        return Err(CoreError::InvalidArgument("mask and target lengths differ".into()));
    }
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / t } else { 0.0 }).collect();
    Ok(logits.cross_entropy(x0, &weights)?)
}

/// Appends `n_new` rows drawn from `N(μ, σ²)` where `μ`, `σ` are the scalar
/// mean and population standard deviation of all existing entries.
pub fn extend_embeddings(table: &Tensor, n_new: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if table.is_empty() {
        return Err(CoreError::Empty("embedding table".into()));
    }
    let n = table.len() as f64;
    let mean = table.sum() / n;
    let var = table.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let d = table.cols();
    let mut data = table.data().to_vec();
    data.extend((0..n_new * d).map(|_| mean + std * rng.sample::<f64, _>(StandardNormal)));
    Ok(Tensor::new(vec![table.rows() + n_new, d], data)?)
}

#[derive(Debug, Clone)]
pub struct Dlm {
    cfg: DlmConfig,
    vocab_size: usize,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    positions: Tensor,
    pad: Option<TokenId>,
}

/// Standard deviation of the initial token and segment embeddings.
pub const EMBED_STD: f64 = 0.5;

impl Dlm {
    pub fn new(cfg: &DlmConfig, vocab_size: usize, pad: Option<TokenId>) -> Self {
        Self {
            cfg: cfg.clone(),
            vocab_size,
            blocks: (0..cfg.layers)
                .map(|l| TransformerBlock::new(&format!("dlm.block.{l}"), cfg.d, cfg.heads, cfg.ffn_mult * cfg.d))
                .collect(),
            ln_f: LayerNorm::new("dlm.ln_f", cfg.d),
            positions: sinusoidal_positions(cfg.max_len, cfg.d),
            pad,
        }
    }

    pub fn config(&self) -> &DlmConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Initializes the backbone for a vocabulary whose first `base` ids are
    /// the text vocabulary; rows `base..vocab_size` of the embedding and the
    /// output head are added by [`extend_embeddings`].
    pub fn init(&self, store: &mut ParameterStore, base: usize, rng: &mut impl Rng) -> Result<()> {
        let d = self.cfg.d;
        let extra = self.vocab_size.checked_sub(base).ok_or_else(|| CoreError::InvalidArgument("base larger than vocab".into()))?;
        let embed = init::normal(rng, &[base, d], 0.0, EMBED_STD);
        store.insert(EMBED, extend_embeddings(&embed, extra, rng)?)?;
        let head = init::normal(rng, &[base, d], 0.0, 1.0 / (d as f64).sqrt());
        store.insert(HEAD, extend_embeddings(&head, extra, rng)?)?;
        store.insert(HEAD_BIAS, Tensor::zeros(&[1, self.vocab_size]))?;
        store.insert(SEGMENT, init::normal(rng, &[4, d], 0.0, EMBED_STD))?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.ln_f.init(store)?;
        Ok(())
    }

    fn region<'t>(&self, cx: &Ctx<'t>, ids: &[TokenId], region: Region) -> Result<Var<'t>> {
        let emb = cx.tape.gather(cx.p(EMBED)?, ids)?;
        let seg = cx.tape.gather(cx.p(SEGMENT)?, &[region as usize])?;
        let pos = cx.constant(self.positions_rows(ids.len()));
        Ok(emb.add_row(seg)?.add(pos)?)
    }

    fn positions_rows(&self, n: usize) -> Tensor {
        let d = self.cfg.d;
        Tensor::new(vec![n, d], self.positions.data()[..n * d].to_vec()).expect("position slice")
    }

    /// Logits `L × V` over the response region of
    /// `[H_aligned] ++ q ++ s ++ x_t`. Attention is bidirectional; PAD keys
    /// are hidden. Positions restart at 0 in every region.
    pub fn predict<'t>(&self, cx: &Ctx<'t>, x_t: &[TokenId], q: &[TokenId], s: &[TokenId], h_aligned: Option<Var<'t>>) -> Result<Var<'t>> {
        let n_h = h_aligned.map_or(0, |h| h.rows());
        let total = n_h + q.len() + s.len() + x_t.len();
        if total > self.cfg.max_len {
            return Err(CoreError::ContextOverflow { len: total, max: self.cfg.max_len });
        }
        if x_t.is_empty() {
            return Err(CoreError::Empty("response region".into()));
        }
        if let Some(&bad) = [q, s, x_t].iter().flat_map(|r| r.iter()).find(|&&id| id >= self.vocab_size) {
            return Err(CoreError::InvalidArgument(format!("token id {bad} outside vocabulary")));
        }
        let mut parts = Vec::with_capacity(4);
        if let Some(h) = h_aligned {
            if h.cols() != self.cfg.d {
                return Err(CoreError::InvalidArgument(format!("aligned width {} != {}", h.cols(), self.cfg.d)));
            }
            let seg = cx.tape.gather(cx.p(SEGMENT)?, &[Region::Graph as usize])?;
            parts.push(h.add_row(seg)?);
        }
        for (ids, region) in [(q, Region::Question), (s, Region::Selfies), (x_t, Region::Response)] {
            if !ids.is_empty() {
                parts.push(self.region(cx, ids, region)?);
            }
        }
        let mut x = cx.tape.concat_rows(&parts)?;
        let mask = self.pad.and_then(|pad| {
            let is_pad: Vec<bool> =
                std::iter::repeat_n(false, n_h).chain([q, s, x_t].iter().flat_map(|r| r.iter().map(|&id| id == pad))).collect();
            is_pad.iter().any(|&p| p).then(|| (0..total).flat_map(|_| is_pad.iter().map(|&p| !p)).collect::<Vec<bool>>())
        });
        for b in &self.blocks {
            x = b.forward(cx, x, mask.as_deref())?;
        }
        let x = self.ln_f.forward(cx, x)?.slice_rows(total - x_t.len(), x_t.len())?;
        Ok(x.matmul_t(cx.p(HEAD)?)?.add_row(cx.p(HEAD_BIAS)?)?)
    }
}
