//! The checked-in fuzz seeds must stay valid inputs, otherwise the fuzzers
//! start from nothing.

use std::path::PathBuf;

use moldiff_chem::{MolecularGraph, SelfiesSequence, Vocab};
use moldiff_core::data::read_jsonl;
use moldiff_core::Config;
use moldiff_numerics::Checkpoint;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn checkpoint_seeds_load() {
    for (name, b) in seeds("checkpoint") {
        Checkpoint::from_bytes(&b).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_seeds_load() {
    for (name, b) in seeds("config") {
        Config::from_toml(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn dataset_seeds_load() {
    let all = seeds("dataset_jsonl");
    for (name, b) in &all {
        read_jsonl(b.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(all.iter().any(|(_, b)| read_jsonl(b.as_slice()).unwrap().len() == 6));
}

#[test]
fn vocab_seeds_load() {
    for (name, b) in seeds("vocab") {
        Vocab::from_text(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn graph_seeds_cover_accept_and_reject() {
    let results: Vec<bool> = seeds("graph_json").iter().map(|(_, b)| MolecularGraph::from_json(text(b)).is_ok()).collect();
    assert!(results.contains(&true) && results.contains(&false), "{results:?}");
}

#[test]
fn selfies_text_seeds_parse() {
    for (name, b) in seeds("selfies") {
        if let Ok(t) = std::str::from_utf8(&b) {
            if t.starts_with('[') {
                SelfiesSequence::parse(t).unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }
}
