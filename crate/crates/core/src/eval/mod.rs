//! Evaluation protocols: zero-shot classification, retrieval, linear and
//! few-shot probing, and caption overlap metrics.

use ndarray::Array2;

use crate::data::SensorDay;
use crate::model::Model;
use crate::text::{frame_for_encoder, Vocabulary};
use crate::{Error, Result};

mod metrics;
mod probe;
mod report;
mod zeroshot;

pub use metrics::{
    auroc_macro_ovr, auroc_per_class, balanced_accuracy, caption_metrics, f1_per_class, lcs_len, macro_f1,
    retrieval_recall, rouge_l, token_f1, CaptionScores,
};
pub use probe::{
    class_weights, few_shot_eval, few_shot_subset, linear_probe_eval, probe_objective, ClassificationMetrics,
    FewShotPoint, LinearProbe, ProbeConfig, FEW_SHOT_SEEDS, FEW_SHOT_SIZES,
};
pub use report::EvalReport;
pub use zeroshot::{class_embedding, class_embedding_from, ZeroShotClassifier};

fn stack(rows: Vec<ndarray::Array1<f64>>) -> Result<Array2<f64>> {
    let dim = rows.first().map(|r| r.len()).ok_or_else(|| Error::invalid("nothing to encode"))?;
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}

/// Unit sensor embeddings of normalized days, one row per day.
pub fn encode_days(model: &Model, days: &[&SensorDay]) -> Result<Array2<f64>> {
    stack(days.iter().map(|d| model.encode_sensor(d).map(|(_, e)| e)).collect::<Result<_>>()?)
}

/// Unit text embeddings, one row per text.
pub fn encode_texts<S: AsRef<str>>(model: &Model, vocab: &Vocabulary, texts: &[S]) -> Result<Array2<f64>> {
    stack(
        texts
            .iter()
            .map(|t| model.encode_text(&frame_for_encoder(&vocab.tokenize(t.as_ref()), model.config.max_text_len)?))
            .collect::<Result<_>>()?,
    )
}

#[cfg(test)]
mod tests;
