#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_core::data::{read_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = read_jsonl(data) else { return };
    let Some(split) = records.first().map(|r| r.split) else { return };
    let mut buf = Vec::new();
    write_jsonl(&mut buf, split, &records).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), records);
});
