#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_chem::{decode, encode, fingerprint, MolecularGraph};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(g) = MolecularGraph::from_json(text) else { return };
    assert!(g.is_valid(), "from_json accepted an invalid graph");
    assert_eq!(MolecularGraph::from_json(&g.to_json()).unwrap(), g);
    let _ = fingerprint(&g);
    if let Ok(s) = encode(&g) {
        assert!(decode(&s).is_valid());
    }
});
