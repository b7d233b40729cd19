#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model).expect("decoded model re-encodes");
        assert_eq!(bytes, data);
    }
});
