#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_core::MolDiff;
use moldiff_numerics::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Checkpoint::from_bytes(data) else { return };
    let bytes = c.to_bytes();
    let again = Checkpoint::from_bytes(&bytes).expect("written checkpoint reloads");
    assert_eq!(again.to_bytes(), bytes);
    // Structurally valid containers may still be rejected as models.
    let _ = MolDiff::from_checkpoint(&c);
});
