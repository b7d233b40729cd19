#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use sensorlm::model::{Model, ModelConfig};
use sensorlm::trainer::{decode_train_state, encode_train_state};

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::init(ModelConfig::gradcheck(16, 10), 0).unwrap())
}

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_train_state(data, model().clone()) {
        assert_eq!(encode_train_state(&state), data);
    }
});
