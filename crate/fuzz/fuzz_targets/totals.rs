#![no_main]

use agedeath::data::parse_totals;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_totals(data);
});
