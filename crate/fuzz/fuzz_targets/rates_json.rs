//! Reporting-rate tables: arbitrary JSON must parse to a valid table or an
//! error, and valid tables must roundtrip through their writer.

#![no_main]

use libfuzzer_sys::fuzz_target;

use epi_smc_core::io::{rates_from_json, rates_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rates) = rates_from_json(text) else { return };
    let rewritten = rates_to_json(&rates);
    let reparsed = rates_from_json(&rewritten).expect("roundtrip");
    for s in 1..=rates.horizon() {
        assert_eq!(reparsed.at_time(s), rates.at_time(s));
    }
});
