//! Fuzzes the TOML problem-configuration parser: arbitrary input must
//! produce either a config or an error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = hillgap::config::ProblemConfig::from_toml_str(text);
    }
});
