//! Glue between the data, caption, text and trainer modules: caption corpora
//! aligned to days, class labels, stratified splits and training examples.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::caption::{compose_caption, CaptionParams, CaptionRecord, CaptionVariant, TemplatePool};
use crate::data::{EventLog, SensorDay};
use crate::rng::{hash_str, rng_for};
use crate::text::{frame_for_decoder, frame_for_encoder, Vocabulary};
use crate::trainer::TrainExample;
use crate::{Error, Result};

/// One caption per day for `variant`. Each day draws from its own seeded
/// stream, so a day's caption does not depend on the rest of the corpus.
pub fn caption_corpus(
    days: &[SensorDay],
    logs: &[EventLog],
    variant: CaptionVariant,
    pool: &TemplatePool,
    params: &CaptionParams,
    seed: u64,
) -> Result<Vec<CaptionRecord>> {
    if days.len() != logs.len() {
        return Err(Error::Shape(format!("{} days for {} event logs", days.len(), logs.len())));
    }
    days.iter()
        .zip(logs)
        .map(|(d, l)| {
            let mut rng = rng_for(seed, &[hash_str("caption"), variant.code(), d.person_id, d.day_id]);
            let c = compose_caption(d, l, variant, pool, params, &mut rng)?;
            Ok(CaptionRecord { person_id: d.person_id, day_id: d.day_id, text: c.text, levels: c.levels, variant })
        })
        .collect()
}

/// Caption text of `variant` for every day, matched by `(person_id, day_id)`.
pub fn align_captions(days: &[SensorDay], records: &[CaptionRecord], variant: CaptionVariant) -> Result<Vec<String>> {
    let mut by_key: HashMap<(u64, u64), &str> = HashMap::new();
    for r in records.iter().filter(|r| r.variant == variant) {
        if by_key.insert((r.person_id, r.day_id), &r.text).is_some() {
            return Err(Error::format(format!(
                "two {variant} captions for person {} day {}",
                r.person_id, r.day_id
            )));
        }
    }
    days.iter()
        .map(|d| {
            by_key.get(&(d.person_id, d.day_id)).map(|t| t.to_string()).ok_or_else(|| {
                Error::invalid(format!("no {variant} caption for person {} day {}", d.person_id, d.day_id))
            })
        })
        .collect()
}

/// Index into `classes` of each day's first activity that names a class.
pub fn day_labels(logs: &[EventLog], classes: &[String]) -> Result<Vec<usize>> {
    logs.iter()
        .enumerate()
        .map(|(i, l)| {
            let label = l.primary_label(classes).ok_or_else(|| Error::invalid(format!("day {i} has no class activity")))?;
            Ok(classes.iter().position(|c| c == label).expect("label comes from classes"))
        })
        .collect()
}

/// Per-class seeded split; returns `(train, test)` indices in ascending order.
///
/// Every class with at least two days keeps at least one day on each side.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie strictly between 0 and 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng_for(seed, &[hash_str("split"), c as u64]));
        let mut k = (idx.len() as f64 * test_fraction).round() as usize;
        if idx.len() >= 2 {
            k = k.clamp(1, idx.len() - 1);
        } else {
            k = 0;
        }
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Tokenized training examples from normalized days and their captions.
pub fn make_examples(days: &[SensorDay], texts: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TrainExample>> {
    if days.len() != texts.len() {
        return Err(Error::Shape(format!("{} days for {} captions", days.len(), texts.len())));
    }
    days.iter()
        .zip(texts)
        .map(|(d, t)| {
            let ids = vocab.tokenize(t);
            Ok(TrainExample { day: d.clone(), text: frame_for_encoder(&ids, max_len)?, caption: frame_for_decoder(&ids, max_len)? })
        })
        .collect()
}

/// Longest framed caption among `texts` (content tokens plus START and END).
pub fn max_framed_len(texts: &[String], vocab: &Vocabulary) -> usize {
    texts.iter().map(|t| vocab.tokenize(t).len() + 2).max().unwrap_or(2)
}
