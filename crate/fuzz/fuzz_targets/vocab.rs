#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_chem::Vocab;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(v) = Vocab::from_text(text) else { return };
    let back = Vocab::from_text(&v.to_text()).expect("serialized vocab reloads");
    assert_eq!(back.tokens(), v.tokens());
    let ids = v.tokenize_text(text);
    assert!(ids.iter().all(|&i| i < v.len()));
    let _ = v.render(&ids);
    let _ = v.tokenize_selfies(text);
});
