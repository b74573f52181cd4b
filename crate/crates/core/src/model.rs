//! The full model bundle: graph encoder, projector, diffusion backbone and
//! the two pretraining heads, sharing one parameter store.

use std::path::Path;

use moldiff_chem::{MolecularGraph, SelfiesSequence, TokenId, Vocab};
use moldiff_numerics::layers::Ctx;
use moldiff_numerics::{Checkpoint, ParameterStore, SeedStream, Tape, Tensor, Var};

use crate::aligner::{AlignedEmbedding, Provenance, QFormer};
use crate::config::{Config, DataConfig};
use crate::data::{InstructionRecord, Task};
use crate::dlm::Dlm;
use crate::encoder::{FuncGroupHead, GraphEncoder, NodeIds, ReconDecoder};
use crate::error::{CoreError, Result};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const ALIGNER_PREFIX: &str = "aligner.";
pub const DLM_PREFIX: &str = "dlm.";
pub const PRETRAIN_PREFIX: &str = "pretrain.";
pub const ALL_PREFIXES: [&str; 4] = [ENCODER_PREFIX, ALIGNER_PREFIX, DLM_PREFIX, PRETRAIN_PREFIX];

/// Response length for a task.
pub fn gen_len(task: Task, data: &DataConfig) -> usize {
    match task {
        Task::Generate | Task::Forward | Task::Retro => data.gen_len_molecule,
        Task::Caption => data.gen_len_caption,
        Task::PropReg | Task::PropCls => data.gen_len_property,
    }
}

/// Token-level view of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub task: Task,
    pub q: Vec<TokenId>,
    pub s: Vec<TokenId>,
    pub x0: Vec<TokenId>,
    pub graph: Option<MolecularGraph>,
    /// Whether the target had to be cut to fit the response length.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct MolDiff {
    pub cfg: Config,
    pub vocab: Vocab,
    /// Size of the text part of the vocabulary (ids below it predate the
    /// SELFIES block).
    pub n_text: usize,
    pub encoder: GraphEncoder,
    pub aligner: QFormer,
    pub dlm: Dlm,
    pub func_head: FuncGroupHead,
    pub recon: ReconDecoder,
    pub store: ParameterStore,
    /// Stage ids completed so far, in order.
    pub stages: Vec<String>,
}

fn modules(cfg: &Config, vocab: &Vocab) -> (GraphEncoder, QFormer, Dlm, FuncGroupHead, ReconDecoder) {
    let e = &cfg.encoder;
    let d = cfg.dlm.d;
    (
        GraphEncoder::new(e),
        QFormer::new(&cfg.aligner, e.d_g, d),
        Dlm::new(&cfg.dlm, vocab.len(), Some(vocab.pad())),
        FuncGroupHead::new(d, e.func_hidden),
        ReconDecoder::new(d, e.d_g, e.recon_layers, e.recon_heads, cfg.data.max_selfies_len.max(1)),
    )
}

impl MolDiff {
    /// Fresh model with parameters drawn from `cfg.seed`.
    pub fn new(cfg: Config, vocab: Vocab, n_text: usize) -> Result<Self> {
        cfg.validate()?;
        if n_text > vocab.len() {
            return Err(CoreError::InvalidArgument("text vocabulary larger than the full vocabulary".into()));
        }
        let (encoder, aligner, dlm, func_head, recon) = modules(&cfg, &vocab);
        let mut m = Self { cfg, vocab, n_text, encoder, aligner, dlm, func_head, recon, store: ParameterStore::new(), stages: Vec::new() };
        m.store = m.fresh_store()?;
        Ok(m)
    }

    fn fresh_store(&self) -> Result<ParameterStore> {
        let seeds = SeedStream::new(self.cfg.seed).split("init");
        let mut store = ParameterStore::new();
        self.encoder.init(&mut store, &mut seeds.rng_for("encoder"))?;
        self.aligner.init(&mut store, &mut seeds.rng_for("aligner"))?;
        self.dlm.init(&mut store, self.n_text, &mut seeds.rng_for("dlm"))?;
        self.func_head.init(&mut store, &mut seeds.rng_for("func"))?;
        self.recon.init(&mut store, &mut seeds.rng_for("recon"))?;
        Ok(store)
    }

    /// Re-draws the projector parameters (same values as at construction).
    pub fn reinit_aligner(&mut self) -> Result<()> {
        let fresh = self.fresh_store()?;
        let names: Vec<String> = self.store.names().filter(|n| n.starts_with(ALIGNER_PREFIX)).map(str::to_string).collect();
        for n in names {
            self.store.set(&n, fresh.get(&n).expect("same layout").clone())?;
        }
        Ok(())
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    /// Whether the projector has been trained, so graph conditioning is used.
    pub fn uses_graph(&self) -> bool {
        self.has_stage("align")
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn encode_record(&self, rec: &InstructionRecord) -> Result<EncodedRecord> {
        let v = &self.vocab;
        let q = v.tokenize_text(&rec.question);
        let s = v.encode_selfies(&rec.input_sequence()?);
        let mut target = if rec.task.outputs_molecule() { v.tokenize_selfies(&rec.target)? } else { v.tokenize_text(&rec.target) };
        let len = gen_len(rec.task, &self.cfg.data);
        let truncated = target.len() > len;
        if truncated {
            log::warn!("record {}: target of {} tokens cut to {len}", rec.id, target.len());
            target.truncate(len);
        }
        target.resize(len, v.eos());
        Ok(EncodedRecord { task: rec.task, q, s, x0: target, graph: rec.graph.clone(), truncated })
    }

    /// `Q-Former(Encoder(g))`.
    pub fn aligned<'t>(&self, cx: &Ctx<'t>, g: &MolecularGraph, ids: NodeIds<'_>, prov: Provenance) -> Result<AlignedEmbedding<'t>> {
        let hybrid = self.encoder.forward(cx, g, ids)?;
        self.aligner.forward(cx, &hybrid, prov)
    }

    /// Response logits given an optional aligned prefix.
    pub fn predict<'t>(&self, cx: &Ctx<'t>, rec: &EncodedRecord, x_t: &[TokenId], h: Option<Var<'t>>) -> Result<Var<'t>> {
        self.dlm.predict(cx, x_t, &rec.q, &rec.s, h)
    }

    /// Value of the aligned prefix at evaluation time (fixed identifiers),
    /// or `None` when the model does not use graph conditioning.
    pub fn aligned_value(&self, g: Option<&MolecularGraph>) -> Result<Option<Tensor>> {
        match g {
            Some(g) if self.uses_graph() => {
                let tape = Tape::new();
                let cx = Ctx::new(&tape, &self.store);
                Ok(Some(Tensor::clone(&self.aligned(&cx, g, NodeIds::Eval, Provenance::Chosen)?.rows.value())))
            }
            _ => Ok(None),
        }
    }

    /// Logits for `x_t` with a precomputed aligned prefix.
    pub fn logits_with(&self, rec: &EncodedRecord, x_t: &[TokenId], h: Option<&Tensor>) -> Result<Tensor> {
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.store);
        let h = h.map(|t| cx.constant(t.clone()));
        Ok(Tensor::clone(&self.predict(&cx, rec, x_t, h)?.value()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_store(&self.store);
        c.meta.insert("format".into(), "moldiff.model.v1".into());
        c.meta.insert("config".into(), self.cfg.to_toml());
        c.meta.insert("vocab".into(), self.vocab.to_text());
        c.meta.insert("n_text".into(), self.n_text.to_string());
        c.meta.insert("stages".into(), self.stages.join(","));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| c.meta.get(k).ok_or_else(|| CoreError::Format(format!("checkpoint lacks `{k}`")));
        if meta("format")? != "moldiff.model.v1" {
            return Err(CoreError::Format("not a model checkpoint".into()));
        }
        let cfg = Config::from_toml(meta("config")?)?;
        let vocab = Vocab::from_text(meta("vocab")?)?;
        let n_text = meta("n_text")?.parse().map_err(|_| CoreError::Format("bad n_text".into()))?;
        let mut m = Self::new(cfg, vocab, n_text)?;
        for name in c.tensors.keys() {
            if !m.store.contains(name) {
                return Err(CoreError::Format(format!("unexpected tensor `{name}`")));
            }
        }
        if let Some(missing) = m.store.names().find(|n| !c.tensors.contains_key(*n)) {
            return Err(CoreError::Format(format!("checkpoint lacks tensor `{missing}`")));
        }
        c.load_into(&mut m.store)?;
        m.stages = meta("stages")?.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Checkpoint::load(path).map_err(|e| CoreError::MissingPrerequisite(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&c)
    }

    /// Decodes predicted response ids into a SELFIES sequence, ignoring
    /// anything that is not a SELFIES token.
    pub fn selfies_of(&self, ids: &[TokenId]) -> SelfiesSequence {
        SelfiesSequence::new(ids.iter().filter_map(|&id| self.vocab.selfies_token(id)).collect())
    }
}
