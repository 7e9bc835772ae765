#![no_main]

use agedeath::data::parse_panel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // anything that parses must survive a write/parse round trip unchanged
    if let Ok(panel) = parse_panel(data) {
        let mut out = Vec::new();
        panel.write_csv(&mut out).expect("writing a parsed panel");
        assert_eq!(parse_panel(out.as_slice()).expect("reparsing a written panel"), panel);
    }
});
