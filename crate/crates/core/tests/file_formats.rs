//! File formats through the public API, using the checked-in fuzz seeds as
//! known-good inputs.

use std::path::PathBuf;

use sensorlm::caption::{decode_caption_corpus, encode_caption_corpus, TemplatePool};
use sensorlm::data::{decode_event_log, decode_sensor_file, encode_sensor_file};
use sensorlm::model::{decode_checkpoint, encode_checkpoint, Model, ModelConfig};
use sensorlm::text::Vocabulary;
use sensorlm::trainer::{decode_train_state, encode_train_state};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

fn gradcheck_model() -> Model {
    Model::init(ModelConfig::gradcheck(16, 10), 0).unwrap()
}

/// Every strict prefix of a valid binary file must be rejected without panicking.
fn prefixes_fail<T: std::fmt::Debug>(bytes: &[u8], decode: impl Fn(&[u8]) -> sensorlm::Result<T>) {
    let step = (bytes.len() / 97).max(1);
    for n in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        assert!(decode(&bytes[..n]).is_err(), "prefix of {n} bytes decoded");
    }
}

#[test]
fn dataset_seeds_round_trip() {
    for (name, bytes) in seeds("dataset_file") {
        let days = decode_sensor_file(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_sensor_file(&days).unwrap(), bytes, "{name}");
        prefixes_fail(&bytes, decode_sensor_file);
    }
}

#[test]
fn dataset_magic_is_checked() {
    let (_, mut bytes) = seeds("dataset_file").remove(0);
    bytes[0] ^= 0xff;
    assert!(decode_sensor_file(&bytes).is_err());
}

#[test]
fn event_log_seeds_are_valid() {
    for (name, bytes) in seeds("event_log") {
        let rows = decode_event_log(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!rows.is_empty(), "{name}");
        for (_, _, log) in &rows {
            log.validate().unwrap();
        }
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (name, bytes) in seeds("checkpoint") {
        let model = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_checkpoint(&model).unwrap(), bytes, "{name}");
        prefixes_fail(&bytes, decode_checkpoint);
    }
}

#[test]
fn fresh_checkpoint_matches_seed() {
    // the seed doubles as a format freeze: a layout change shows up here
    let (_, bytes) = seeds("checkpoint").remove(0);
    assert_eq!(encode_checkpoint(&gradcheck_model()).unwrap(), bytes);
}

#[test]
fn train_state_seeds_round_trip() {
    for (name, bytes) in seeds("train_state") {
        let state = decode_train_state(&bytes, gradcheck_model()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_train_state(&state), bytes, "{name}");
        prefixes_fail(&bytes, |b| decode_train_state(b, gradcheck_model()));
    }
}

#[test]
fn train_state_rejects_other_model_shapes() {
    let (_, bytes) = seeds("train_state").remove(0);
    let other = Model::init(ModelConfig::gradcheck(17, 10), 0).unwrap();
    assert!(decode_train_state(&bytes, other).is_err());
}

#[test]
fn vocab_seeds_round_trip() {
    for (name, bytes) in seeds("vocab_file") {
        let v = Vocabulary::from_file_string(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = Vocabulary::from_file_string(&v.to_file_string()).unwrap();
        assert_eq!(again.len(), v.len());
        assert_eq!(again.to_file_string(), v.to_file_string());
    }
}

#[test]
fn template_seed_is_the_bundled_pool() {
    for (name, bytes) in seeds("template_pool") {
        let pool = TemplatePool::parse(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(pool, TemplatePool::default());
    }
}

#[test]
fn caption_seeds_round_trip() {
    for (name, bytes) in seeds("caption_corpus") {
        let records = decode_caption_corpus(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = decode_caption_corpus(&encode_caption_corpus(&records).unwrap()).unwrap();
        assert_eq!(again, records, "{name}");
    }
}
