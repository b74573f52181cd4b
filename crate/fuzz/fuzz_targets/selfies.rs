#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_chem::selfies::ALPHABET_SIZE;
use moldiff_chem::{decode, encode, SelfiesSequence};

fuzz_target!(|data: &[u8]| {
    // Raw bytes as dialect ids: decoding is total.
    let ids: Vec<usize> = data.iter().map(|&b| b as usize % ALPHABET_SIZE).collect();
    let g = decode(&SelfiesSequence::from_dialect_ids(&ids).unwrap());
    assert!(g.is_valid());
    if let Ok(s) = encode(&g) {
        let again = encode(&decode(&s)).expect("canonical form re-encodes");
        assert_eq!(again, s);
    }

    // Text form: parse may fail, but never panics, and rendering round-trips.
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(seq) = SelfiesSequence::parse(text) {
            assert_eq!(SelfiesSequence::parse(&seq.render()).unwrap(), seq);
            assert!(decode(&seq).is_valid());
        }
    }
});
