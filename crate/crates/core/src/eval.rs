//! Evaluation: task routing to the sampler, per-task metrics, the
//! preference margin probe and the denoising-steps ablation.

use std::io::Write;
use std::time::Instant;

use moldiff_chem::{decode, encode, fingerprint, perturb, tanimoto, SelfiesSequence, TokenId};
use moldiff_numerics::{ops, SeedStream, Tensor};
use serde::Serialize;

use crate::aligner::Provenance;
use crate::config::{SamplerConfig, Strategy};
use crate::data::{InstructionRecord, Task};
use crate::dlm::forward_mask;
use crate::encoder::NodeIds;
use crate::error::{CoreError, Result};
use crate::metrics::{auroc, mae, mean, rmse, rouge1};
use crate::model::{gen_len, EncodedRecord, MolDiff};
use crate::molpo::implicit_reward_value;
use crate::sampler::{sample, truncate_eos, DenoiseTrace, SpecialTokens};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

pub fn write_metrics_csv(mut w: impl Write, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "task,metric,value,n")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{}", r.task, r.metric, r.value, r.n)?;
    }
    Ok(())
}

/// Routing: molecule outputs are decoded in one pass over the whole
/// response, text outputs block by block.
pub fn strategy_for(task: Task) -> Strategy {
    if task.outputs_molecule() {
        Strategy::Pure
    } else {
        Strategy::Block
    }
}

/// Sampler settings for `task`, starting from `base`.
pub fn sampler_for(model: &MolDiff, task: Task, base: &SamplerConfig) -> SamplerConfig {
    SamplerConfig { gen_len: gen_len(task, &model.cfg.data), strategy: strategy_for(task), ..base.clone() }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: u64,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub trace: DenoiseTrace,
}

/// Samples a response for one record.
pub fn predict_record(model: &MolDiff, rec: &InstructionRecord, sampler: &SamplerConfig) -> Result<Prediction> {
    let enc = model.encode_record(rec)?;
    let h = model.aligned_value(enc.graph.as_ref())?;
    let cfg = sampler_for(model, rec.task, sampler);
    let special = SpecialTokens::from_vocab(&model.vocab);
    let denoiser = |x: &[TokenId]| model.logits_with(&enc, x, h.as_ref());
    let (x, trace) = sample(&denoiser, &cfg, &special)?;
    let tokens = truncate_eos(&x, model.vocab.eos());
    let text = if rec.task.outputs_molecule() { model.selfies_of(&tokens).render() } else { model.vocab.render(&tokens) };
    Ok(Prediction { id: rec.id, tokens, text, trace })
}

/// `encode(decode(s))` rendered, or the raw rendering when the decoded
/// graph falls outside what the encoder can express.
pub fn canonical(s: &SelfiesSequence) -> String {
    encode(&decode(s)).map(|c| c.render()).unwrap_or_else(|_| s.render())
}

fn molecule_rows(task: Task, pairs: &[(String, String)]) -> Result<Vec<MetricRow>> {
    let n = pairs.len();
    let mut exact = 0usize;
    let mut sims = Vec::with_capacity(n);
    let mut valid = 0usize;
    for (pred, target) in pairs {
        let p = SelfiesSequence::parse(pred)?;
        let t = SelfiesSequence::parse(target)?;
        exact += (canonical(&p) == canonical(&t)) as usize;
        let (gp, gt) = (decode(&p), decode(&t));
        valid += gp.is_valid() as usize;
        sims.push(tanimoto(&fingerprint(&gp), &fingerprint(&gt))?);
    }
    Ok(vec![
        row(task, "exact_match", exact as f64 / n as f64, n),
        row(task, "fp_sim", mean(sims), n),
        row(task, "validity", valid as f64 / n as f64, n),
    ])
}

fn row(task: Task, metric: &str, value: f64, n: usize) -> MetricRow {
    MetricRow { task: task.id().to_string(), metric: metric.to_string(), value, n }
}

/// Probability of "True" at the first response position under one
/// full-mask prediction.
pub fn true_probability(model: &MolDiff, enc: &EncodedRecord) -> Result<f64> {
    let id = model.vocab.id("True").ok_or_else(|| CoreError::InvalidArgument("vocabulary lacks `True`".into()))?;
    let h = model.aligned_value(enc.graph.as_ref())?;
    let x = vec![model.vocab.mask(); enc.x0.len()];
    let logits = model.logits_with(enc, &x, h.as_ref())?;
    Ok(ops::softmax(&Tensor::row_vector(logits.row(0)), 1)?.data()[id])
}

/// Metric rows for `task` over `records`, which must all be of that task.
pub fn evaluate(model: &MolDiff, records: &[&InstructionRecord], task: Task, sampler: &SamplerConfig) -> Result<Vec<MetricRow>> {
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(CoreError::InvalidArgument(format!("record {} is `{}`, expected `{task}`", r.id, r.task)));
    }
    if records.is_empty() {
        return Err(CoreError::Empty(format!("no `{task}` records")));
    }
    let preds = records.iter().map(|r| predict_record(model, r, sampler)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(String, String)> = preds.iter().zip(records).map(|(p, r)| (p.text.clone(), r.target.clone())).collect();
    let n = pairs.len();
    match task {
        Task::Generate | Task::Forward | Task::Retro => molecule_rows(task, &pairs),
        Task::Caption => Ok(vec![row(task, "rouge1", mean(pairs.iter().map(|(p, t)| rouge1(p, t))), n)]),
        Task::PropReg => {
            let truth: Vec<f64> = pairs.iter().map(|(_, t)| t.parse().unwrap_or(f64::NAN)).collect();
            let parsed: Vec<Option<f64>> = pairs.iter().map(|(p, _)| p.parse().ok()).collect();
            let fallback = mean(truth.iter().copied());
            let pred: Vec<f64> = parsed.iter().map(|p| p.unwrap_or(fallback)).collect();
            let ok = parsed.iter().filter(|p| p.is_some()).count();
            Ok(vec![
                row(task, "rmse", rmse(&pred, &truth), n),
                row(task, "mae", mae(&pred, &truth), n),
                row(task, "parse_rate", ok as f64 / n as f64, n),
            ])
        }
        Task::PropCls => {
            let acc = pairs.iter().filter(|(p, t)| p == t).count() as f64 / n as f64;
            let mut scores = Vec::with_capacity(n);
            for r in records {
                scores.push(true_probability(model, &model.encode_record(r)?)?);
            }
            let labels: Vec<bool> = records.iter().map(|r| r.target == "True").collect();
            Ok(vec![row(task, "accuracy", acc, n), row(task, "auroc", auroc(&scores, &labels), n)])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreferenceProbe {
    pub mean_r_w: f64,
    pub mean_r_l: f64,
    pub pairs: usize,
    pub degenerate: usize,
}

impl PreferenceProbe {
    pub fn margin(&self) -> f64 {
        self.mean_r_w - self.mean_r_l
    }
}

/// Mean implicit rewards under the original and a perturbed graph, one
/// shared mask per record. Records without a graph or with a degenerate
/// perturbation are skipped.
pub fn preference_probe(model: &MolDiff, records: &[&InstructionRecord], seed: u64) -> Result<PreferenceProbe> {
    let seeds = SeedStream::new(seed).split("preference");
    let beta = model.cfg.molpo.beta;
    let (mut sw, mut sl, mut pairs, mut degenerate) = (0.0, 0.0, 0, 0);
    for rec in records {
        let Some(g) = &rec.graph else { continue };
        let mut rng = seeds.index(rec.id).rng();
        let rejected = perturb(g, &mut rng);
        if rejected.degenerate {
            degenerate += 1;
            continue;
        }
        let enc = model.encode_record(rec)?;
        let t = 0.5;
        let (x_t, mask) = forward_mask(&enc.x0, t, model.vocab.mask(), &mut rng)?;
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let value = |g| -> Result<_> {
            let tape = moldiff_numerics::Tape::new();
            let cx = moldiff_numerics::layers::Ctx::new(&tape, &model.store);
            let h = model.aligned(&cx, g, NodeIds::Eval, Provenance::Chosen)?.rows;
            Ok(Tensor::clone(&model.predict(&cx, &enc, &x_t, Some(h))?.value()))
        };
        sw += implicit_reward_value(&value(g)?, &enc.x0, &mask, beta)?;
        sl += implicit_reward_value(&value(&rejected.graph)?, &enc.x0, &mask, beta)?;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(CoreError::Empty("no preference pairs".into()));
    }
    Ok(PreferenceProbe { mean_r_w: sw / pairs as f64, mean_r_l: sl / pairs as f64, pairs, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub steps: usize,
    pub exact: f64,
    pub fp_sim: f64,
    pub seconds: f64,
    pub model_calls: usize,
}

/// Evaluates a molecule task once per entry of `steps_list`.
pub fn ablate_steps(
    model: &MolDiff,
    records: &[&InstructionRecord],
    task: Task,
    base: &SamplerConfig,
    steps_list: &[usize],
) -> Result<Vec<AblationRow>> {
    if steps_list.is_empty() {
        return Err(CoreError::Empty("step list".into()));
    }
    if !task.outputs_molecule() {
        return Err(CoreError::InvalidArgument(format!("`{task}` does not produce molecules")));
    }
    let mut out = Vec::new();
    for &steps in steps_list {
        let cfg = SamplerConfig { steps, ..base.clone() };
        let started = Instant::now();
        let mut calls = 0;
        let mut pairs = Vec::with_capacity(records.len());
        for r in records {
            let p = predict_record(model, r, &cfg)?;
            calls += p.trace.model_calls();
            pairs.push((p.text, r.target.clone()));
        }
        let seconds = started.elapsed().as_secs_f64();
        let rows = molecule_rows(task, &pairs)?;
        out.push(AblationRow { steps, exact: rows[0].value, fp_sim: rows[1].value, seconds, model_calls: calls });
    }
    Ok(out)
}

pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "T,exact,fp_sim,seconds,model_calls")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6},{:.3},{}", r.steps, r.exact, r.fp_sim, r.seconds, r.model_calls)?;
    }
    Ok(())
}
