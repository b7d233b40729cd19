//! In-memory pipeline shared by the file-based commands and the ablation grid.

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use sensorlm::data::{compute_norm_stats, normalize, EventLog, NormStats, SensorDay};
use sensorlm::eval::{encode_days, encode_texts, linear_probe_eval, retrieval_recall, ProbeConfig, ZeroShotClassifier};
use sensorlm::model::Model;
use sensorlm::pipeline::{day_labels, make_examples, max_framed_len, stratified_split};
use sensorlm::text::Vocabulary;
use sensorlm::trainer::{train, LogRow, TrainConfig, TrainState};

use crate::config::ModelSection;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labels, split and normalized days of a dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub labels: Vec<usize>,
    pub split: Split,
    pub stats: NormStats,
    pub norm: Vec<SensorDay>,
}

/// Labels days, splits them per class and normalizes with training-split statistics.
pub fn prepare(days: &[SensorDay], logs: &[EventLog], classes: &[String], test_fraction: f64, seed: u64) -> Result<Prepared> {
    let labels = day_labels(logs, classes)?;
    let (train, test) = stratified_split(&labels, test_fraction, seed)?;
    let train_days: Vec<SensorDay> = train.iter().map(|&i| days[i].clone()).collect();
    let stats = compute_norm_stats(&train_days)?;
    Ok(with_stats(days, labels, Split { train, test }, stats))
}

pub fn with_stats(days: &[SensorDay], labels: Vec<usize>, split: Split, stats: NormStats) -> Prepared {
    let norm = days.iter().map(|d| normalize(d, &stats)).collect();
    Prepared { labels, split, stats, norm }
}

impl Prepared {
    pub fn days(&self, idx: &[usize]) -> Vec<&SensorDay> {
        idx.iter().map(|&i| &self.norm[i]).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

pub fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Vocabulary and framed length from the training captions.
pub fn build_vocab(train_texts: &[String], min_freq: usize, cap: usize) -> Result<(Vocabulary, usize)> {
    let vocab = Vocabulary::build(train_texts, min_freq)?;
    let max_len = max_framed_len(train_texts, &vocab).min(cap);
    Ok((vocab, max_len))
}

/// Trains a fresh model on the training split of `texts` (one caption per day).
pub fn fit(
    prepared: &Prepared,
    texts: &[String],
    vocab: &Vocabulary,
    max_len: usize,
    model: &ModelSection,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&TrainState, &LogRow),
) -> Result<(TrainState, Vec<LogRow>)> {
    let train_idx = &prepared.split.train;
    let examples = make_examples(&pick(&prepared.norm, train_idx), &pick(texts, train_idx), vocab, max_len)?;
    let model_cfg = model.build(vocab.len(), max_len)?;
    info!("model: {} parameters, {} sensor tokens", model_cfg.num_params(), model_cfg.n_tokens());
    let mut state = TrainState::new(Model::init(model_cfg, cfg.seed)?);
    let rows = train(&mut state, &examples, cfg, &mut on_step).context("training failed")?;
    Ok((state, rows))
}

/// Summary metrics of one trained model on the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub zs_auroc: f64,
    pub zs_f1: f64,
    pub zs_bacc: f64,
    pub probe_auroc: f64,
    pub r_at_1: f64,
}

pub fn evaluate_cell(
    model: &Model,
    vocab: &Vocabulary,
    prepared: &Prepared,
    texts: &[String],
    classes: &[String],
    probe: &ProbeConfig,
) -> Result<CellMetrics> {
    let (train_idx, test_idx) = (&prepared.split.train, &prepared.split.test);
    let s_test = encode_days(model, &prepared.days(test_idx))?;
    let s_train = encode_days(model, &prepared.days(train_idx))?;
    let y_test = prepared.labels_of(test_idx);
    let zs = ZeroShotClassifier::build(model, vocab, classes)?.evaluate(&s_test, &y_test)?;
    let probe = linear_probe_eval(&s_train, &prepared.labels_of(train_idx), &s_test, &y_test, classes.len(), probe)?;
    let t_test = encode_texts(model, vocab, &pick(texts, test_idx))?;
    let (r1, _) = retrieval_recall(&s_test, &t_test, 1)?;
    Ok(CellMetrics {
        zs_auroc: zs.auroc,
        zs_f1: zs.macro_f1,
        zs_bacc: zs.balanced_accuracy,
        probe_auroc: probe.auroc,
        r_at_1: r1,
    })
}
