//! Observation CSVs: the reader must never panic, and whatever it accepts
//! must survive a write/read loop unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

use epi_smc_core::io::{read_observations, write_observations};

fuzz_target!(|data: &[u8]| {
    let Ok(y) = read_observations(data, None) else { return };
    let mut rewritten = Vec::new();
    write_observations(&mut rewritten, &y).expect("write");
    let reparsed = read_observations(rewritten.as_slice(), None).expect("roundtrip");
    assert_eq!(reparsed, y);
});
