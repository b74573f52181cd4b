//! Synthetic instruction data.
//!
//! Files are JSON lines. The first line is a header
//! `{"schema":"moldiff.instruction.v1","split":"train"}`; every other line is
//! one [`InstructionRecord`].

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use moldiff_chem::{
    decode, detect_functional_groups, encode, fingerprint, fingerprint::fnv1a64, random_graph, toy_property, toy_reaction_forward,
    MolecularGraph, PropertyKind, SelfiesSequence, Vocab,
};
use moldiff_numerics::SeedStream;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::error::{CoreError, Result};

pub const SCHEMA: &str = "moldiff.instruction.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Caption,
    Generate,
    PropReg,
    PropCls,
    Forward,
    Retro,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Caption, Task::Generate, Task::PropReg, Task::PropCls, Task::Forward, Task::Retro];

    pub fn id(self) -> &'static str {
        match self {
            Task::Caption => "caption",
            Task::Generate => "generate",
            Task::PropReg => "prop_reg",
            Task::PropCls => "prop_cls",
            Task::Forward => "forward",
            Task::Retro => "retro",
        }
    }

    pub fn from_id(id: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.id() == id)
    }

    /// Tasks whose answer is a SELFIES string.
    pub fn outputs_molecule(self) -> bool {
        matches!(self, Task::Generate | Task::Forward | Task::Retro)
    }

    /// Tasks with an input molecule (and so a graph to condition on).
    pub fn has_input_molecule(self) -> bool {
        !matches!(self, Task::Generate)
    }

    pub fn question(self) -> &'static str {
        match self {
            Task::Caption => "Describe this molecule.",
            Task::Generate => "Generate a molecule that fits this description:",
            Task::PropReg => "What is the Wiener index of this molecule?",
            Task::PropCls => "Does this molecule contain a ring?",
            Task::Forward => "Predict the product of the oxidation reaction.",
            Task::Retro => "Predict the reactant of this oxidation product.",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub id: u64,
    pub task: Task,
    pub question: String,
    /// Bracket text; empty when the task has no input molecule.
    pub selfies_in: String,
    /// Graph of `selfies_in`, absent when there is none.
    pub graph: Option<MolecularGraph>,
    pub target: String,
    pub split: Split,
}

impl InstructionRecord {
    pub fn input_sequence(&self) -> Result<SelfiesSequence> {
        Ok(SelfiesSequence::parse(&self.selfies_in)?)
    }

    /// Checks the record invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Format(format!("record {}: {m}", self.id)));
        if self.target.is_empty() {
            return bad("empty target");
        }
        let s = self.input_sequence()?;
        if self.task.has_input_molecule() {
            let Some(g) = &self.graph else { return bad("missing graph") };
            if decode(&s) != *g {
                return bad("graph does not match selfies_in");
            }
        } else if !s.is_empty() || self.graph.is_some() {
            return bad("generate records take no input molecule");
        }
        if self.task.outputs_molecule() {
            SelfiesSequence::parse(&self.target)?;
        }
        match self.task {
            Task::Forward => {
                let product = decode(&SelfiesSequence::parse(&self.target)?);
                if toy_reaction_forward(&decode(&s)) != product {
                    return bad("target is not the reaction product");
                }
            }
            Task::Retro => {
                let reactant = decode(&SelfiesSequence::parse(&self.target)?);
                if toy_reaction_forward(&reactant) != decode(&s) {
                    return bad("reaction of the target does not give the input");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

const GROUP_PHRASES: [&str; 8] = [
    "a carbonyl group",
    "a hydroxyl group",
    "an amine group",
    "a nitrile group",
    "a sulfur atom",
    "a ring",
    "a fluorine atom",
    "a carboxyl group",
];

/// Templated description, e.g. `This molecule has 5 heavy atoms, contains a
/// ring, and a carbonyl group.`
pub fn caption(g: &MolecularGraph) -> String {
    let groups = detect_functional_groups(g);
    // The ring phrase first, then the others in key order.
    let order = [5, 0, 1, 2, 3, 4, 6, 7];
    let phrases: Vec<&str> = order.iter().filter(|&&k| groups[k]).map(|&k| GROUP_PHRASES[k]).collect();
    let n = g.num_atoms();
    let atoms = if n == 1 { "heavy atom" } else { "heavy atoms" };
    let mut out = format!("This molecule has {n} {atoms}");
    match phrases.as_slice() {
        [] => out.push_str(" and no functional groups"),
        [one] => out.push_str(&format!(" and contains {one}")),
        [init @ .., last] => out.push_str(&format!(", contains {}, and {last}", init.join(", "))),
    }
    out.push('.');
    out
}

fn number_text(x: f64) -> String {
    format!("{x:.2}")
}

/// Text vocabulary: every word the templates can produce, digits, and
/// punctuation. SELFIES tokens are appended by [`build_vocab`].
pub fn base_words() -> Vec<String> {
    let mut text: Vec<String> = Task::ALL.iter().map(|t| t.question().to_string()).collect();
    text.push("This molecule has heavy atom atoms and contains no functional groups , . True False".into());
    text.extend(GROUP_PHRASES.iter().map(|p| p.to_string()));
    text.push("0 1 2 3 4 5 6 7 8 9 - :".into());
    let mut words = Vec::new();
    for t in &text {
        for w in moldiff_chem::vocab::split_text(t) {
            if !words.contains(&w) {
                words.push(w);
            }
        }
    }
    words
}

/// Base text vocabulary extended with the dialect block. Returns the
/// vocabulary and the size of the text part.
pub fn build_vocab() -> Result<(Vocab, usize)> {
    let words = base_words();
    let base = Vocab::from_words(words.iter().map(String::as_str))?;
    let n_base = base.len();
    let (v, _) = base.with_selfies()?;
    Ok((v, n_base))
}

/// Split by fingerprint hash so equal fingerprints never straddle splits.
pub fn split_of(g: &MolecularGraph, cfg: &DataConfig) -> Split {
    let bits: Vec<u8> = fingerprint(g).bits().iter().map(|&b| b as u8).collect();
    let u = (fnv1a64(&bits) % 1_000_000) as f64 / 1_000_000.0;
    if u < cfg.train_fraction {
        Split::Train
    } else if u < cfg.train_fraction + cfg.val_fraction {
        Split::Val
    } else {
        Split::Test
    }
}

/// A canonical, encodable random graph with a short enough string.
fn sample_graph(rng: &mut impl rand::Rng, cfg: &DataConfig, accept: impl Fn(&MolecularGraph) -> bool) -> (MolecularGraph, SelfiesSequence) {
    loop {
        let g = random_graph(rng, cfg.max_atoms);
        let Ok(s) = encode(&g) else { continue };
        if s.len() > cfg.max_selfies_len {
            continue;
        }
        let canon = decode(&s);
        if accept(&canon) {
            return (canon, s);
        }
    }
}

fn make_record(id: u64, task: Task, rng: &mut impl rand::Rng, cfg: &DataConfig) -> InstructionRecord {
    let question = task.question().to_string();
    let record = |g: &MolecularGraph, s: &SelfiesSequence, question: String, target: String, graph: bool| InstructionRecord {
        id,
        task,
        question,
        selfies_in: if graph { s.render() } else { String::new() },
        graph: graph.then(|| g.clone()),
        target,
        split: split_of(g, cfg),
    };
    match task {
        Task::Caption => {
            let (g, s) = sample_graph(rng, cfg, |_| true);
            record(&g, &s, question, caption(&g), true)
        }
        Task::Generate => {
            let (g, s) = sample_graph(rng, cfg, |_| true);
            record(&g, &s, format!("{question} {}", caption(&g)), s.render(), false)
        }
        Task::PropReg => {
            let (g, s) = sample_graph(rng, cfg, |_| true);
            let w = toy_property(&g, PropertyKind::WienerIndex).expect("connected").as_f64();
            record(&g, &s, question, number_text(w), true)
        }
        Task::PropCls => {
            let (g, s) = sample_graph(rng, cfg, |_| true);
            let ring = toy_property(&g, PropertyKind::HasRing).expect("total");
            record(&g, &s, question, ring.to_string(), true)
        }
        Task::Forward => {
            let (g, s) = sample_graph(rng, cfg, |_| true);
            let product = encode(&toy_reaction_forward(&g)).expect("oxidation keeps the graph encodable");
            record(&g, &s, question, product.render(), true)
        }
        Task::Retro => {
            // Input is the product of a reactant that has a site.
            let (reactant, rs) = sample_graph(rng, cfg, |g| moldiff_chem::props::oxidation_site(g).is_some());
            let product = toy_reaction_forward(&reactant);
            let ps = encode(&product).expect("oxidation keeps the graph encodable");
            let mut r = record(&product, &ps, question, rs.render(), true);
            r.split = split_of(&reactant, cfg);
            r
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<InstructionRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &InstructionRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn task_split(&self, task: Task, split: Split) -> Vec<&InstructionRecord> {
        self.split(split).filter(|r| r.task == task).collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for split in Split::ALL {
            let f = std::fs::File::create(dir.join(format!("{}.jsonl", split.name())))?;
            let recs: Vec<_> = self.split(split).cloned().collect();
            write_jsonl(std::io::BufWriter::new(f), split, &recs)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for split in Split::ALL {
            let path = dir.join(format!("{}.jsonl", split.name()));
            let f = std::fs::File::open(&path).map_err(|e| CoreError::MissingPrerequisite(format!("{}: {e}", path.display())))?;
            records.extend(read_jsonl(std::io::BufReader::new(f))?);
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    split: Split,
}

pub fn write_jsonl(mut w: impl Write, split: Split, records: &[InstructionRecord]) -> Result<()> {
    let header = Header { schema: SCHEMA.to_string(), split };
    let js = |e: serde_json::Error| CoreError::Format(e.to_string());
    serde_json::to_writer(&mut w, &header).map_err(js)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(js)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses and validates one split file.
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<InstructionRecord>> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| CoreError::Format("missing header line".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    if header.schema != SCHEMA {
        return Err(CoreError::Format(format!("unsupported schema `{}`", header.schema)));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(&line).map_err(|e| CoreError::Format(format!("line {}: {e}", i + 2)))?;
        if rec.split != header.split {
            return Err(CoreError::Format(format!("line {}: record split differs from header", i + 2)));
        }
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Generates `cfg.sizes` records per task. Record ids are dense and each
/// record draws from its own seed, so output is reproducible.
pub fn gen_dataset(seed: u64, cfg: &DataConfig) -> Dataset {
    let seeds = SeedStream::new(seed).split("dataset");
    let sizes = &cfg.sizes;
    let mut records = Vec::new();
    let mut id = 0u64;
    for (task, n) in [
        (Task::Caption, sizes.caption),
        (Task::Generate, sizes.generate),
        (Task::PropReg, sizes.prop_reg),
        (Task::PropCls, sizes.prop_cls),
        (Task::Forward, sizes.forward),
        (Task::Retro, sizes.retro),
    ] {
        let task_seeds = seeds.split(task.id());
        for i in 0..n {
            let mut rng = task_seeds.index(i as u64).rng();
            records.push(make_record(id, task, &mut rng, cfg));
            id += 1;
        }
    }
    Dataset { records }
}
