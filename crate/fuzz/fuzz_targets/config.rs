#![no_main]

use libfuzzer_sys::fuzz_target;
use moldiff_core::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = Config::from_toml(text) else { return };
    let dumped = cfg.to_toml();
    let back = Config::from_toml(&dumped).expect("dumped config reloads");
    assert_eq!(back.to_toml(), dumped);
});
