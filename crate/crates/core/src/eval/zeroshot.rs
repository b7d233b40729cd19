//! Zero-shot classification against prompt-ensemble class embeddings.

use ndarray::{Array1, Array2};

use super::probe::ClassificationMetrics;
use crate::model::Model;
use crate::text::{frame_for_encoder, make_prompt_set, PromptSet, Vocabulary};
use crate::{Error, Result};

/// Mean of unit prompt embeddings, renormalized.
pub fn class_embedding_from(prompt_embeddings: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = prompt_embeddings.first().ok_or_else(|| Error::invalid("class has no prompts"))?;
    let mut mean = Array1::zeros(first.len());
    for e in prompt_embeddings {
        if e.len() != first.len() {
            return Err(Error::Shape("prompt embeddings differ in width".into()));
        }
        let n = e.dot(e).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numerical("prompt embedding with zero or non-finite norm".into()));
        }
        mean += &(e / n);
    }
    mean /= prompt_embeddings.len() as f64;
    let norm = mean.dot(&mean).sqrt();
    if norm < 1e-9 {
        return Err(Error::Numerical("prompt embeddings cancel out; class embedding has near-zero norm".into()));
    }
    Ok(mean / norm)
}

/// Unit embedding of a class from its prompt set.
pub fn class_embedding(model: &Model, vocab: &Vocabulary, set: &PromptSet) -> Result<Array1<f64>> {
    let embs = set
        .prompts
        .iter()
        .map(|p| model.encode_text(&frame_for_encoder(&vocab.tokenize(p), model.config.max_text_len)?))
        .collect::<Result<Vec<_>>>()?;
    class_embedding_from(&embs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotClassifier {
    pub classes: Vec<String>,
    /// `K x E`, unit rows.
    pub embeddings: Array2<f64>,
    /// Column order that visits classes by label, used to break score ties.
    lexical: Vec<usize>,
}

impl ZeroShotClassifier {
    pub fn from_embeddings(classes: Vec<String>, embeddings: Array2<f64>) -> Result<Self> {
        if classes.len() != embeddings.nrows() || classes.is_empty() {
            return Err(Error::Shape(format!("{} classes for {} embeddings", classes.len(), embeddings.nrows())));
        }
        let mut lexical: Vec<usize> = (0..classes.len()).collect();
        lexical.sort_by(|&a, &b| classes[a].cmp(&classes[b]));
        Ok(Self { classes, embeddings, lexical })
    }

    /// Builds class embeddings from the standard prompt sets.
    pub fn build(model: &Model, vocab: &Vocabulary, classes: &[String]) -> Result<Self> {
        let rows = classes
            .iter()
            .map(|c| class_embedding(model, vocab, &make_prompt_set(c)))
            .collect::<Result<Vec<_>>>()?;
        let dim = rows[0].len();
        let mut emb = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            emb.row_mut(i).assign(r);
        }
        Self::from_embeddings(classes.to_vec(), emb)
    }

    /// Cosine similarity of each class to each sensor embedding, `N x K`.
    pub fn scores(&self, sensor: &Array2<f64>) -> Result<Array2<f64>> {
        if sensor.ncols() != self.embeddings.ncols() {
            return Err(Error::Shape(format!("sensor width {} vs class width {}", sensor.ncols(), self.embeddings.ncols())));
        }
        let mut s = sensor.to_owned();
        for mut row in s.rows_mut() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Numerical("sensor embedding with zero or non-finite norm".into()));
            }
            row /= n;
        }
        Ok(s.dot(&self.embeddings.t()))
    }

    /// Index of the best class per row; ties go to the lexicographically smallest label.
    pub fn predict(&self, sensor: &Array2<f64>) -> Result<Vec<usize>> {
        let scores = self.scores(sensor)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = self.lexical[0];
                for &j in &self.lexical[1..] {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn evaluate(&self, sensor: &Array2<f64>, labels: &[usize]) -> Result<ClassificationMetrics> {
        let scores = self.scores(sensor)?;
        let preds = self.predict(sensor)?;
        Ok(ClassificationMetrics {
            auroc: super::metrics::auroc_macro_ovr(&scores, labels)?,
            macro_f1: super::metrics::macro_f1(&preds, labels)?,
            balanced_accuracy: super::metrics::balanced_accuracy(&preds, labels)?,
        })
    }
}
