//! Experiment configs aggregate every user-facing knob; parsing plus
//! validation must never panic, and accepted configs must roundtrip.

#![no_main]

use libfuzzer_sys::fuzz_target;

use epi_smc::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = ExperimentConfig::from_json(text) else { return };
    let reparsed = ExperimentConfig::from_json(&config.to_json()).expect("roundtrip");
    assert_eq!(reparsed, config);
});
