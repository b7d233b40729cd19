#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm::data::decode_event_log;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = decode_event_log(text) {
            for (_, _, log) in &rows {
                log.validate().expect("decoded logs are valid");
            }
        }
    }
});
