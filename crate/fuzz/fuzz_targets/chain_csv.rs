#![no_main]

use agedeath::data::parse_chain_csv;
use agedeath::model::ModelVariant;
use agedeath::sampler::DrawLayout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&rows, body)) = data.split_first() else { return };
    let layout = DrawLayout {
        countries: vec!["C1".into()],
        first_year: 2000,
        n_years: 1,
        variant: ModelVariant::default(),
        max_age: 110,
    };
    if let Ok((params, loglik)) = parse_chain_csv(body, &layout, rows as usize) {
        assert_eq!(loglik.len(), rows as usize);
        assert_eq!(params.len(), rows as usize * layout.n_params());
    }
});
