//! Scenario files come from users; parsing must reject garbage with an
//! error, never a panic, and accepted scenarios must build and roundtrip.

#![no_main]

use libfuzzer_sys::fuzz_target;

use epi_smc_core::io::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scenario) = Scenario::from_json(text) else { return };
    // Anything that validates must serialize and reparse to itself.
    let reparsed = Scenario::from_json(&scenario.to_json()).expect("roundtrip");
    assert_eq!(reparsed, scenario);
    // Accepted scenarios must build; bounded so huge populations only slow
    // the harness, not the fuzzer.
    if scenario.population <= 4096 {
        let _ = scenario.build();
    }
});
