#![no_main]

use agedeath_cli::{parse_config, Overrides};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = parse_config(text) {
        let _ = config.resolve(&Overrides::default());
    }
});
