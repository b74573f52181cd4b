//! Structure preference objective: masked log-likelihood rewards under the
//! chosen and the perturbed graph, and the clipped log-sigmoid loss.

use moldiff_chem::TokenId;
use moldiff_numerics::{ops, Tensor, Var};

use crate::config::MolpoConfig;
use crate::data::Task;
use crate::error::{CoreError, Result};

fn reward_weights(mask: &[bool], beta: f64) -> Result<Vec<f64>> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(CoreError::EmptyMask);
    }
    Ok(mask.iter().map(|&m| if m { beta / n as f64 } else { 0.0 }).collect())
}

/// `r = (β/N) Σ_{masked i} log p(x0_i | ·)`, differentiable.
pub fn implicit_reward<'t>(logits: Var<'t>, x0: &[TokenId], mask: &[bool], beta: f64) -> Result<Var<'t>> {
    let w = reward_weights(mask, beta)?;
    Ok(logits.cross_entropy(x0, &w)?.scale(-1.0))
}

pub fn implicit_reward_value(logits: &Tensor, x0: &[TokenId], mask: &[bool], beta: f64) -> Result<f64> {
    let w = reward_weights(mask, beta)?;
    Ok(-ops::cross_entropy(logits, x0, &w)?)
}

impl MolpoConfig {
    /// Target margin of `task`; unknown ids fall back to 0 with a warning.
    pub fn gamma_for(&self, task: &str) -> f64 {
        if Task::from_id(task).is_none() {
            log::warn!("unknown task id `{task}`, using a target margin of 0");
            return 0.0;
        }
        self.gamma.get(task).copied().unwrap_or(0.0)
    }
}

/// `−log σ(β·(min(r_w − r_ℓ, λ|r_w|) − γ))`, written as `softplus(−z)`.
pub fn molpo_loss<'t>(r_w: Var<'t>, r_l: Var<'t>, task: &str, cfg: &MolpoConfig) -> Result<Var<'t>> {
    let margin = r_w.sub(r_l)?.min(r_w.abs().scale(cfg.lambda_clip))?;
    let z = margin.add_scalar(-cfg.gamma_for(task)).scale(cfg.beta);
    Ok(z.scale(-1.0).softplus())
}

pub fn molpo_loss_value(r_w: f64, r_l: f64, task: &str, cfg: &MolpoConfig) -> f64 {
    let margin = (r_w - r_l).min(cfg.lambda_clip * r_w.abs());
    let z = cfg.beta * (margin - cfg.gamma_for(task));
    softplus(-z)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `L_SFT + c·L_MolPO`.
pub fn total_loss<'t>(l_sft: Var<'t>, l_molpo: Var<'t>, cfg: &MolpoConfig) -> Result<Var<'t>> {
    Ok(l_sft.add(l_molpo.scale(cfg.c))?)
}
