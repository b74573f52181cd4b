//! Every tunable in one TOML document. Each module owns a section; missing
//! keys take the defaults printed by `moldiff config --dump`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_g: usize,
    pub gine_layers: usize,
    pub gt_layers: usize,
    pub gt_heads: usize,
    /// Width of the orthonormal node identifiers; also the largest graph the
    /// global branch accepts.
    pub id_dim: usize,
    pub atom_types: usize,
    pub bond_types: usize,
    pub recon_layers: usize,
    pub recon_heads: usize,
    pub func_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_g: 64,
            gine_layers: 3,
            gt_layers: 2,
            gt_heads: 4,
            id_dim: 32,
            atom_types: 6,
            bond_types: 3,
            recon_layers: 2,
            recon_heads: 4,
            func_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignerConfig {
    pub n_q: usize,
    pub heads: usize,
    pub depth: usize,
    /// Re-initialize the projector after encoder pretraining instead of
    /// continuing from the provisional one.
    pub reinit_after_pretrain: bool,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self { n_q: 32, heads: 4, depth: 1, reinit_after_pretrain: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlmConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    /// Lower end of the masking-ratio distribution U(t_min, 1].
    pub t_min: f64,
}

impl Default for DlmConfig {
    fn default() -> Self {
        Self { d: 128, layers: 4, heads: 4, ffn_mult: 4, max_len: 256, t_min: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MolpoConfig {
    pub beta: f64,
    pub lambda_clip: f64,
    /// Target margin per task id.
    pub gamma: BTreeMap<String, f64>,
    pub c: f64,
}

impl Default for MolpoConfig {
    fn default() -> Self {
        let gamma = crate::data::Task::ALL.iter().map(|t| (t.id().to_string(), 0.0)).collect();
        Self { beta: 0.1, lambda_clip: 1.0, gamma, c: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pure,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub gen_len: usize,
    pub strategy: Strategy,
    pub block_len: usize,
    /// 0 selects greedy argmax.
    pub temperature: f64,
    pub seed: u64,
    /// Let later steps re-open finalized positions.
    pub revisit: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 64, gen_len: 32, strategy: Strategy::Pure, block_len: 32, temperature: 0.0, seed: 0, revisit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSizes {
    pub caption: usize,
    pub generate: usize,
    pub prop_reg: usize,
    pub prop_cls: usize,
    pub forward: usize,
    pub retro: usize,
}

impl Default for TaskSizes {
    fn default() -> Self {
        Self { caption: 2000, generate: 2000, prop_reg: 2000, prop_cls: 2000, forward: 4000, retro: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sizes: TaskSizes,
    pub max_atoms: usize,
    /// Longest input SELFIES kept, in tokens.
    pub max_selfies_len: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Response lengths, EOS padding included.
    pub gen_len_molecule: usize,
    pub gen_len_caption: usize,
    pub gen_len_property: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sizes: TaskSizes::default(),
            max_atoms: 10,
            max_selfies_len: 20,
            train_fraction: 0.9,
            val_fraction: 0.05,
            gen_len_molecule: 24,
            gen_len_caption: 40,
            gen_len_property: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Cap on training records per epoch; 0 means all.
    pub max_records: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { epochs: 1, lr: 1e-3, batch_size: 16, warmup_steps: 50, weight_decay: 0.0, clip_norm: 1.0, max_records: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub pretrain_encoder: StageConfig,
    pub sft_text: StageConfig,
    pub align: StageConfig,
    pub molpo_joint: StageConfig,
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self {
            pretrain_encoder: StageConfig { epochs: 20, ..StageConfig::default() },
            sft_text: StageConfig { epochs: 5, ..StageConfig::default() },
            align: StageConfig { epochs: 1, ..StageConfig::default() },
            molpo_joint: StageConfig { epochs: 1, lr: 3e-4, ..StageConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub aligner: AlignerConfig,
    pub dlm: DlmConfig,
    pub molpo: MolpoConfig,
    pub sampler: SamplerConfig,
    pub data: DataConfig,
    pub stages: StagesConfig,
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CoreError::Config(msg.to_string()))
    }
}

impl Config {
    /// Small preset that trains in minutes on one CPU core.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.encoder = EncoderConfig { d_g: 32, gine_layers: 2, gt_layers: 1, gt_heads: 2, recon_heads: 2, func_hidden: 32, ..c.encoder };
        c.aligner.n_q = 8;
        c.aligner.heads = 4;
        c.dlm = DlmConfig { d: 64, layers: 3, heads: 4, ffn_mult: 2, max_len: 128, t_min: 0.01 };
        c.data.max_atoms = 8;
        c.data.max_selfies_len = 16;
        c.data.gen_len_molecule = 18;
        c.data.gen_len_caption = 32;
        c.sampler.gen_len = 18;
        c.sampler.block_len = 8;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        check(e.d_g > 0 && e.gt_heads > 0 && e.d_g.is_multiple_of(e.gt_heads), "encoder.d_g must be divisible by encoder.gt_heads")?;
        check(e.recon_heads > 0 && e.d_g.is_multiple_of(e.recon_heads), "encoder.d_g must be divisible by encoder.recon_heads")?;
        check(e.atom_types == 6 && e.bond_types == 3, "encoder.atom_types/bond_types must be 6/3 for this dialect")?;
        check(e.id_dim > 0, "encoder.id_dim must be positive")?;
        let a = &self.aligner;
        check(a.n_q > 0 && a.depth > 0, "aligner.n_q and aligner.depth must be positive")?;
        check(a.heads > 0 && self.dlm.d.is_multiple_of(a.heads), "dlm.d must be divisible by aligner.heads")?;
        let d = &self.dlm;
        check(d.d > 0 && d.heads > 0 && d.d.is_multiple_of(d.heads), "dlm.d must be divisible by dlm.heads")?;
        check(d.t_min > 0.0 && d.t_min < 1.0, "dlm.t_min must lie in (0, 1)")?;
        let m = &self.molpo;
        check(m.beta > 0.0, "molpo.beta must be positive")?;
        check(m.lambda_clip >= 0.0 && m.c >= 0.0, "molpo.lambda_clip and molpo.c must be non-negative")?;
        let s = &self.sampler;
        check(s.steps >= 1 && s.gen_len >= 1 && s.block_len >= 1, "sampler steps, gen_len and block_len must be >= 1")?;
        check(s.temperature >= 0.0, "sampler.temperature must be >= 0")?;
        let data = &self.data;
        check(data.max_atoms >= 1 && data.max_atoms <= e.id_dim, "data.max_atoms must be in 1..=encoder.id_dim")?;
        check(
            data.train_fraction >= 0.0 && data.val_fraction >= 0.0 && data.train_fraction + data.val_fraction <= 1.0,
            "split fractions must be non-negative and sum to at most 1",
        )?;
        for (name, st) in [
            ("pretrain_encoder", &self.stages.pretrain_encoder),
            ("sft_text", &self.stages.sft_text),
            ("align", &self.stages.align),
            ("molpo_joint", &self.stages.molpo_joint),
        ] {
            check(
                st.batch_size >= 1 && st.lr > 0.0 && st.clip_norm > 0.0,
                &format!("stages.{name}: batch_size, lr, clip_norm must be positive"),
            )?;
        }
        Ok(())
    }
}
