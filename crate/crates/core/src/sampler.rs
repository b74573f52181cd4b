//! Iterative denoising from an all-mask response.
//!
//! Each step predicts every still-masked position, keeps the most confident
//! predictions so that `round(L·k/T)` positions are final after step `k`,
//! and leaves the rest masked. Block mode runs the same schedule block by
//! block, left to right, with later blocks held masked.

use std::io::Write;

use moldiff_chem::TokenId;
use moldiff_numerics::{SeedStream, Tensor};
use rand::Rng;
use serde::Serialize;

use crate::config::{SamplerConfig, Strategy};
use crate::error::{CoreError, Result};

/// Anything that maps a (partially masked) response to `L × V` logits.
pub trait DenoiseModel {
    fn logits(&self, x: &[TokenId]) -> Result<Tensor>;
}

impl<F: Fn(&[TokenId]) -> Result<Tensor>> DenoiseModel for F {
    fn logits(&self, x: &[TokenId]) -> Result<Tensor> {
        self(x)
    }
}

/// Token ids the sampler needs to know about.
#[derive(Debug, Clone)]
pub struct SpecialTokens {
    pub mask: TokenId,
    pub eos: TokenId,
    /// Never emitted (mask, padding, BOS and similar).
    pub forbidden: Vec<TokenId>,
}

impl SpecialTokens {
    pub fn from_vocab(v: &moldiff_chem::Vocab) -> Self {
        Self { mask: v.mask(), eos: v.eos(), forbidden: vec![v.mask(), v.pad(), v.bos(), v.unk()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub block: usize,
    /// Positions finalized in this step, in selection order.
    pub finalized: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub confidences: Vec<f64>,
    /// Total finalized positions after the step (within the run).
    pub total_finalized: usize,
    /// Whether the model was evaluated in this step.
    pub evaluated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DenoiseTrace {
    pub steps: Vec<StepRecord>,
}

impl DenoiseTrace {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s).map_err(|e| CoreError::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn model_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.evaluated).count()
    }
}

/// `round(len·k/steps)` with halves rounded up, in integers.
pub fn schedule(len: usize, k: usize, steps: usize) -> usize {
    (2 * len * k + steps) / (2 * steps)
}

/// Prefix before the first EOS.
pub fn truncate_eos(tokens: &[TokenId], eos: TokenId) -> Vec<TokenId> {
    tokens.iter().take_while(|&&t| t != eos).copied().collect()
}

/// Per-block step budget `max(1, round(T·b/L))`.
pub fn block_steps(steps: usize, block: usize, gen_len: usize) -> usize {
    schedule(steps, block, gen_len).max(1)
}

fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

struct Candidate {
    pos: usize,
    token: TokenId,
    conf: f64,
}

fn choose(row: &[f64], cfg: &SamplerConfig, special: &SpecialTokens, rng: &mut impl Rng) -> Result<(TokenId, f64)> {
    let probs = softmax_row(row, 1.0);
    let allowed = |j: usize| !special.forbidden.contains(&j);
    let token = if cfg.temperature == 0.0 {
        (0..row.len()).filter(|&j| allowed(j)).fold(None, |best: Option<usize>, j| match best {
            Some(b) if row[b] >= row[j] => Some(b),
            _ => Some(j),
        })
    } else {
        let p = softmax_row(row, cfg.temperature);
        let z: f64 = (0..row.len()).filter(|&j| allowed(j)).map(|j| p[j]).sum();
        let mut u = rng.random::<f64>() * z;
        let mut pick = None;
        for j in (0..row.len()).filter(|&j| allowed(j)) {
            pick = Some(j);
            if u < p[j] {
                break;
            }
            u -= p[j];
        }
        pick
    };
    let token = token.ok_or_else(|| CoreError::InvalidArgument("every token is forbidden".into()))?;
    Ok((token, probs[token]))
}

/// Denoises positions `range` of `x` in `steps` steps.
#[allow(clippy::too_many_arguments)]
fn denoise_range(
    model: &dyn DenoiseModel,
    x: &mut [TokenId],
    range: std::ops::Range<usize>,
    steps: usize,
    block: usize,
    cfg: &SamplerConfig,
    special: &SpecialTokens,
    rng: &mut impl Rng,
    trace: &mut DenoiseTrace,
    step_offset: usize,
) -> Result<()> {
    let len = range.len();
    let mut done = vec![false; len];
    let mut n_done = 0;
    for k in 1..=steps {
        let target = schedule(len, k, steps);
        let new = target - if cfg.revisit { 0 } else { n_done };
        let mut rec = StepRecord {
            step: step_offset + k,
            block,
            finalized: Vec::new(),
            tokens: Vec::new(),
            confidences: Vec::new(),
            total_finalized: n_done,
            evaluated: false,
        };
        if new == 0 {
            trace.steps.push(rec);
            continue;
        }
        let logits = model.logits(x)?;
        if logits.rows() != x.len() {
            return Err(CoreError::InvalidArgument(format!("model returned {} rows for {} positions", logits.rows(), x.len())));
        }
        let open: Vec<usize> = (0..len).filter(|&i| cfg.revisit || !done[i]).collect();
        let mut cands = open
            .into_iter()
            .map(|i| {
                let (token, conf) = choose(logits.row(range.start + i), cfg, special, rng)?;
                Ok(Candidate { pos: i, token, conf })
            })
            .collect::<Result<Vec<_>>>()?;
        cands.sort_by(|a, b| b.conf.total_cmp(&a.conf).then(a.pos.cmp(&b.pos)));
        if cfg.revisit {
            for i in 0..len {
                x[range.start + i] = special.mask;
                done[i] = false;
            }
            n_done = 0;
        }
        for c in cands.into_iter().take(new) {
            x[range.start + c.pos] = c.token;
            done[c.pos] = true;
            n_done += 1;
            rec.finalized.push(range.start + c.pos);
            rec.tokens.push(c.token);
            rec.confidences.push(c.conf);
        }
        rec.total_finalized = n_done;
        rec.evaluated = true;
        trace.steps.push(rec);
    }
    Ok(())
}

pub fn sample_pure(model: &dyn DenoiseModel, cfg: &SamplerConfig, special: &SpecialTokens) -> Result<(Vec<TokenId>, DenoiseTrace)> {
    check(cfg)?;
    let mut x = vec![special.mask; cfg.gen_len];
    let mut trace = DenoiseTrace::default();
    let mut rng = SeedStream::new(cfg.seed).rng_for("sampler");
    denoise_range(model, &mut x, 0..cfg.gen_len, cfg.steps, 0, cfg, special, &mut rng, &mut trace, 0)?;
    Ok((x, trace))
}

pub fn sample_block(model: &dyn DenoiseModel, cfg: &SamplerConfig, special: &SpecialTokens) -> Result<(Vec<TokenId>, DenoiseTrace)> {
    check(cfg)?;
    let mut x = vec![special.mask; cfg.gen_len];
    let mut trace = DenoiseTrace::default();
    let mut rng = SeedStream::new(cfg.seed).rng_for("sampler");
    let mut start = 0;
    let mut block = 0;
    while start < cfg.gen_len {
        let end = (start + cfg.block_len).min(cfg.gen_len);
        let steps = block_steps(cfg.steps, end - start, cfg.gen_len);
        let offset = trace.steps.len();
        denoise_range(model, &mut x, start..end, steps, block, cfg, special, &mut rng, &mut trace, offset)?;
        start = end;
        block += 1;
    }
    Ok((x, trace))
}

pub fn sample(model: &dyn DenoiseModel, cfg: &SamplerConfig, special: &SpecialTokens) -> Result<(Vec<TokenId>, DenoiseTrace)> {
    match cfg.strategy {
        Strategy::Pure => sample_pure(model, cfg, special),
        Strategy::Block => sample_block(model, cfg, special),
    }
}

fn check(cfg: &SamplerConfig) -> Result<()> {
    if cfg.steps == 0 || cfg.gen_len == 0 || cfg.block_len == 0 {
        return Err(CoreError::InvalidArgument("steps, gen_len and block_len must be positive".into()));
    }
    if cfg.temperature < 0.0 || cfg.temperature.is_nan() {
        return Err(CoreError::InvalidArgument("temperature must be >= 0".into()));
    }
    Ok(())
}
