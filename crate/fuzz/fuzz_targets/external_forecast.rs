#![no_main]

use agedeath::evaluation::{parse_external_forecast, write_external_forecast, SIMPLEX_TOLERANCE};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(f) = parse_external_forecast(data) else { return };
    for d in f.entries.values() {
        assert_eq!(d.len(), f.max_age + 1);
        assert!((d.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
    }
    let mut out = Vec::new();
    write_external_forecast(&f.entries, &mut out).expect("writing parsed forecasts");
    let again = parse_external_forecast(out.as_slice()).expect("reparsing written forecasts");
    assert_eq!(again.entries.len(), f.entries.len());
});
