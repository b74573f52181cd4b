//! The staged training recipe.
//!
//! | stage              | trainable                     | objective              |
//! |--------------------|-------------------------------|------------------------|
//! | `pretrain_encoder` | encoder, projector, heads     | group BCE + recon CE   |
//! | `sft_text`         | backbone                      | masked reconstruction  |
//! | `align`            | projector                     | masked reconstruction  |
//! | `molpo_joint`      | encoder, projector, backbone  | `L_SFT + c·L_MolPO`    |

use std::io::Write;

use moldiff_chem::{detect_functional_groups, perturb};
use moldiff_numerics::layers::Ctx;
use moldiff_numerics::{AdamW, AdamWConfig, Gradients, SeedStream, Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::aligner::Provenance;
use crate::config::StageConfig;
use crate::data::InstructionRecord;
use crate::dlm::{dlm_loss, forward_mask, sample_t};
use crate::encoder::{func_group_loss, recon_loss, NodeIds};
use crate::error::{CoreError, Result};
use crate::model::{EncodedRecord, MolDiff, ALIGNER_PREFIX, ALL_PREFIXES, DLM_PREFIX, ENCODER_PREFIX, PRETRAIN_PREFIX};
use crate::molpo::{implicit_reward, molpo_loss, total_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainEncoder,
    SftText,
    Align,
    MolpoJoint,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::PretrainEncoder, Stage::SftText, Stage::Align, Stage::MolpoJoint];

    pub fn id(self) -> &'static str {
        match self {
            Stage::PretrainEncoder => "pretrain_encoder",
            Stage::SftText => "sft_text",
            Stage::Align => "align",
            Stage::MolpoJoint => "molpo_joint",
        }
    }

    pub fn from_id(id: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn trainable(self) -> &'static [&'static str] {
        match self {
            Stage::PretrainEncoder => &[ENCODER_PREFIX, ALIGNER_PREFIX, PRETRAIN_PREFIX],
            Stage::SftText => &[DLM_PREFIX],
            Stage::Align => &[ALIGNER_PREFIX],
            Stage::MolpoJoint => &[ENCODER_PREFIX, ALIGNER_PREFIX, DLM_PREFIX],
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::PretrainEncoder | Stage::SftText => &[],
            Stage::Align => &[Stage::PretrainEncoder, Stage::SftText],
            Stage::MolpoJoint => &[Stage::Align],
        }
    }

    pub fn config(self, model: &MolDiff) -> &StageConfig {
        let s = &model.cfg.stages;
        match self {
            Stage::PretrainEncoder => &s.pretrain_encoder,
            Stage::SftText => &s.sft_text,
            Stage::Align => &s.align,
            Stage::MolpoJoint => &s.molpo_joint,
        }
    }

    /// Which records the stage consumes.
    fn accepts(self, rec: &InstructionRecord) -> bool {
        match self {
            Stage::PretrainEncoder | Stage::Align => rec.graph.is_some(),
            Stage::SftText | Stage::MolpoJoint => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub steps: usize,
    pub examples: usize,
    pub lr_last: f64,
    /// Mean per-example objective.
    pub loss: f64,
    pub l_sft: Option<f64>,
    pub l_molpo: Option<f64>,
    pub l_func: Option<f64>,
    pub l_recon: Option<f64>,
    pub mean_r_w: Option<f64>,
    pub mean_r_l: Option<f64>,
    pub pairs: usize,
    pub degenerate: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub epochs: Vec<EpochLog>,
}

impl StageReport {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e).map_err(|e| CoreError::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Linear warmup to `lr`, then cosine decay to `lr/10` at `total`.
pub fn learning_rate(cfg: &StageConfig, step: usize, total: usize) -> f64 {
    let warm = cfg.warmup_steps;
    if step < warm {
        return cfg.lr * (step + 1) as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Default)]
struct Sums {
    loss: f64,
    sft: (f64, usize),
    molpo: (f64, usize),
    func: (f64, usize),
    recon: (f64, usize),
    r_w: f64,
    r_l: f64,
    pairs: usize,
    degenerate: usize,
    examples: usize,
}

fn avg((s, n): (f64, usize)) -> Option<f64> {
    (n > 0).then(|| s / n as f64)
}

/// Masked reconstruction loss normalized by the response length.
fn sft_term<'t>(
    model: &MolDiff,
    cx: &Ctx<'t>,
    enc: &EncodedRecord,
    h: Option<Var<'t>>,
    x_t: &[usize],
    mask: &[bool],
    t: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let logits = model.predict(cx, enc, x_t, h)?;
    let l = dlm_loss(logits, &enc.x0, mask, t)?.scale(1.0 / enc.x0.len() as f64);
    Ok((l, logits))
}

/// Builds the loss of one record on `tape`. `None` when the record yields
/// no signal (no masked position).
fn example_loss<'t>(
    model: &MolDiff,
    stage: Stage,
    cx: &Ctx<'t>,
    rec: &InstructionRecord,
    rng: &mut impl Rng,
    sums: &mut Sums,
) -> Result<Option<Var<'t>>> {
    let id_seed: u64 = rng.random();
    let enc = model.encode_record(rec)?;
    if stage == Stage::PretrainEncoder {
        let g = enc.graph.as_ref().expect("filtered");
        let h = model.aligned(cx, g, NodeIds::Sample(id_seed), Provenance::Chosen)?.rows;
        let lf = func_group_loss(cx, h, &detect_functional_groups(g), &model.func_head)?;
        let s = rec.input_sequence()?;
        let lr = recon_loss(cx, h, &s, &model.recon)?.scale(1.0 / s.len() as f64);
        sums.func.0 += lf.item();
        sums.func.1 += 1;
        sums.recon.0 += lr.item();
        sums.recon.1 += 1;
        return Ok(Some(lf.add(lr)?));
    }
    let t = sample_t(rng, model.cfg.dlm.t_min);
    let (x_t, mask) = forward_mask(&enc.x0, t, model.vocab.mask(), rng)?;
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let graph = match stage {
        Stage::SftText => None,
        _ => enc.graph.as_ref(),
    };
    let h_w = match graph {
        Some(g) => Some(model.aligned(cx, g, NodeIds::Sample(id_seed), Provenance::Chosen)?.rows),
        None => None,
    };
    let (l_sft, logits_w) = sft_term(model, cx, &enc, h_w, &x_t, &mask, t)?;
    sums.sft.0 += l_sft.item();
    sums.sft.1 += 1;
    let (Stage::MolpoJoint, Some(g)) = (stage, graph) else {
        return Ok(Some(l_sft));
    };
    let rejected = perturb(g, rng);
    if rejected.degenerate {
        sums.degenerate += 1;
        return Ok(Some(l_sft));
    }
    let h_l = model.aligned(cx, &rejected.graph, NodeIds::Sample(id_seed), Provenance::Rejected)?.rows;
    let logits_l = model.predict(cx, &enc, &x_t, Some(h_l))?;
    let beta = model.cfg.molpo.beta;
    let r_w = implicit_reward(logits_w, &enc.x0, &mask, beta)?;
    let r_l = implicit_reward(logits_l, &enc.x0, &mask, beta)?;
    let l_molpo = molpo_loss(r_w, r_l, rec.task.id(), &model.cfg.molpo)?;
    sums.r_w += r_w.item();
    sums.r_l += r_l.item();
    sums.pairs += 1;
    sums.molpo.0 += l_molpo.item();
    sums.molpo.1 += 1;
    total_loss(l_sft, l_molpo, &model.cfg.molpo).map(Some)
}

fn apply_freeze(model: &mut MolDiff, stage: Stage) {
    model.store.freeze_all(true);
    for p in stage.trainable() {
        model.store.freeze_prefix(p, false);
    }
}

fn frozen_bytes(model: &MolDiff, stage: Stage) -> Vec<(&'static str, Vec<u8>)> {
    ALL_PREFIXES.iter().filter(|p| !stage.trainable().contains(p)).map(|&p| (p, model.store.fingerprint_bytes(p))).collect()
}

/// Runs one stage on `records` (already restricted to the training split).
/// Consumed records are shuffled per epoch from `seed`.
pub fn run_stage(model: &mut MolDiff, stage: Stage, records: &[InstructionRecord], seed: u64) -> Result<StageReport> {
    run_stage_with(model, stage, records, seed, |_| {})
}

/// Like [`run_stage`], calling `on_epoch` after every epoch.
pub fn run_stage_with(
    model: &mut MolDiff,
    stage: Stage,
    records: &[InstructionRecord],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<StageReport> {
    for pre in stage.prerequisites() {
        if !model.has_stage(pre.id()) {
            return Err(CoreError::MissingPrerequisite(format!("stage `{}` needs `{}` first", stage.id(), pre.id())));
        }
    }
    let cfg = stage.config(model).clone();
    let seeds = SeedStream::new(seed).split(stage.id());
    let mut pool: Vec<&InstructionRecord> = records.iter().filter(|r| stage.accepts(r)).collect();
    if cfg.max_records > 0 && pool.len() > cfg.max_records {
        // Uniform subset, kept in input order.
        let mut keep = rand::seq::index::sample(&mut seeds.rng_for("subset"), pool.len(), cfg.max_records).into_vec();
        keep.sort_unstable();
        pool = keep.into_iter().map(|i| pool[i]).collect();
    }
    if pool.is_empty() {
        return Err(CoreError::Empty(format!("no records for stage `{}`", stage.id())));
    }
    if stage == Stage::Align && model.cfg.aligner.reinit_after_pretrain {
        model.reinit_aligner()?;
    }
    apply_freeze(model, stage);
    let before = frozen_bytes(model, stage);
    let bs = cfg.batch_size.max(1);
    let per_epoch = pool.len().div_ceil(bs);
    let total = per_epoch * cfg.epochs;
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
    let mut report = StageReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let epoch_seeds = seeds.index(epoch as u64);
        let mut order = pool.clone();
        order.shuffle(&mut epoch_seeds.rng_for("shuffle"));
        let mut sums = Sums::default();
        let mut lr = cfg.lr;
        for batch in order.chunks(bs) {
            let mut grads = Gradients::new();
            let mut used = 0usize;
            for rec in batch {
                let mut rng = epoch_seeds.split("example").index(rec.id).rng();
                let tape = Tape::new();
                let cx = Ctx::new(&tape, &model.store);
                let Some(loss) = example_loss(model, stage, &cx, rec, &mut rng, &mut sums)? else { continue };
                if !loss.item().is_finite() {
                    return Err(CoreError::InvalidArgument(format!("non-finite loss on record {}", rec.id)));
                }
                sums.loss += loss.item();
                sums.examples += 1;
                used += 1;
                grads.merge(&tape.backward(loss)?);
            }
            if used == 0 {
                continue;
            }
            grads.scale(1.0 / used as f64);
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            lr = learning_rate(&cfg, step, total);
            opt.set_lr(lr);
            opt.step(&mut model.store, &grads)?;
            step += 1;
        }
        let n = sums.examples.max(1) as f64;
        let log = EpochLog {
            stage: stage.id().to_string(),
            epoch: epoch + 1,
            steps: step,
            examples: sums.examples,
            lr_last: lr,
            loss: sums.loss / n,
            l_sft: avg(sums.sft),
            l_molpo: avg(sums.molpo),
            l_func: avg(sums.func),
            l_recon: avg(sums.recon),
            mean_r_w: (sums.pairs > 0).then(|| sums.r_w / sums.pairs as f64),
            mean_r_l: (sums.pairs > 0).then(|| sums.r_l / sums.pairs as f64),
            pairs: sums.pairs,
            degenerate: sums.degenerate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{} epoch {} loss {:.4} ({:.1}s)", log.stage, log.epoch, log.loss, log.seconds);
        on_epoch(&log);
        report.epochs.push(log);
    }
    for (prefix, bytes) in before {
        if model.store.fingerprint_bytes(prefix) != bytes {
            return Err(CoreError::FreezeViolation(format!("`{prefix}*` changed during `{}`", stage.id())));
        }
    }
    model.store.freeze_all(false);
    if !model.has_stage(stage.id()) {
        model.stages.push(stage.id().to_string());
    }
    Ok(report)
}
