#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorlm::caption::{decode_caption_corpus, encode_caption_corpus};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = decode_caption_corpus(text) {
            let again = encode_caption_corpus(&records).expect("decoded records re-encode");
            assert_eq!(decode_caption_corpus(&again).expect("round trip"), records);
        }
    }
});
