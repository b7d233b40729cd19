#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm::data::{decode_sensor_file, encode_sensor_file};

fuzz_target!(|data: &[u8]| {
    if let Ok(days) = decode_sensor_file(data) {
        let bytes = encode_sensor_file(&days).expect("decoded days re-encode");
        assert_eq!(decode_sensor_file(&bytes).expect("round trip"), days);
    }
});
