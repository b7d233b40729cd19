#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm::text::Vocabulary;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = Vocabulary::from_file_string(text) {
            let again = Vocabulary::from_file_string(&v.to_file_string()).expect("round trip");
            assert_eq!(again.len(), v.len());
        }
    }
});
