#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text) {
            // compared as text so NaN-valued fields still round-trip
            let text = cfg.to_toml().expect("serializes");
            let again = RunConfig::parse(&text).expect("round trip");
            assert_eq!(again.to_toml().expect("serializes"), text);
        }
    }
});
