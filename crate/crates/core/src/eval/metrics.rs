//! Classification, retrieval and caption metrics.

use std::collections::{BTreeSet, HashMap};

use log::warn;
use ndarray::Array2;

use crate::text::split_words;
use crate::{Error, Result};

/// One-vs-rest AUROC of each class column, `None` for classes that have no
/// positive or no negative example.
///
/// Uses the Mann-Whitney rank statistic with average ranks for ties.
pub fn auroc_per_class(scores: &Array2<f64>, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    let (n, k) = scores.dim();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} score rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside {k} score columns")));
    }
    if scores.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let pos = labels.iter().filter(|&&y| y == c).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            out.push(None);
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[[a, c]].total_cmp(&scores[[b, c]]));
        let mut rank_sum = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores[[order[j + 1], c]] == scores[[order[i], c]] {
                j += 1;
            }
            // ranks i+1 ..= j+1 share their average
            let avg = (i + j) as f64 / 2.0 + 1.0;
            rank_sum += avg * order[i..=j].iter().filter(|&&r| labels[r] == c).count() as f64;
            i = j + 1;
        }
        let (p, q) = (pos as f64, neg as f64);
        out.push(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q)));
    }
    Ok(out)
}

/// Macro one-vs-rest AUROC over the classes present in `labels`.
///
/// Absent classes are skipped with a warning; fewer than two present classes is an error.
pub fn auroc_macro_ovr(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let per = auroc_per_class(scores, labels)?;
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let absent = per.iter().filter(|a| a.is_none()).count();
    if present.len() < 2 {
        return Err(Error::invalid(format!("AUROC needs at least two classes present, got {}", present.len())));
    }
    if absent > 0 {
        warn!("{absent} class(es) absent from labels excluded from macro AUROC");
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// `(tp, fp, fn)` per class for every class in the union of labels and predictions.
fn confusion(preds: &[usize], labels: &[usize]) -> Result<Vec<(usize, usize, usize, usize)>> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let classes: BTreeSet<usize> = preds.iter().chain(labels).copied().collect();
    Ok(classes
        .into_iter()
        .map(|c| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (&p, &y) in preds.iter().zip(labels) {
                match (p == c, y == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            (c, tp, fp, fn_)
        })
        .collect())
}

/// Per-class `(class, f1)` over the union of labelled and predicted classes.
pub fn f1_per_class(preds: &[usize], labels: &[usize]) -> Result<Vec<(usize, f64)>> {
    Ok(confusion(preds, labels)?
        .into_iter()
        .map(|(c, tp, fp, fn_)| (c, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64))
        .collect())
}

pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let per = f1_per_class(preds, labels)?;
    Ok(per.iter().map(|(_, f)| f).sum::<f64>() / per.len() as f64)
}

/// Mean recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let rows: Vec<f64> = confusion(preds, labels)?
        .into_iter()
        .filter(|&(_, tp, _, fn_)| tp + fn_ > 0)
        .map(|(_, tp, _, fn_)| tp as f64 / (tp + fn_) as f64)
        .collect();
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Rank of item `i` in row `i` of `sim`: higher similarity first, ties to the lower index.
fn partner_rank(sim: &Array2<f64>, i: usize) -> usize {
    let target = sim[[i, i]];
    (0..sim.ncols()).filter(|&j| sim[[i, j]] > target || (sim[[i, j]] == target && j < i)).count()
}

/// Recall@K in both directions for paired rows (sensor to text, text to sensor).
///
/// Similarity is the dot product of the (unit) rows; equal similarities rank
/// by ascending index.
pub fn retrieval_recall(sensor: &Array2<f64>, text: &Array2<f64>, k: usize) -> Result<(f64, f64)> {
    let n = sensor.nrows();
    if sensor.dim() != text.dim() || n == 0 {
        return Err(Error::Shape(format!("sensor {:?} vs text {:?}", sensor.dim(), text.dim())));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("K = {k} outside 1..={n}")));
    }
    let sim = sensor.dot(&text.t());
    let sim_t = sim.t().to_owned();
    let hits = |m: &Array2<f64>| (0..n).filter(|&i| partner_rank(m, i) < k).count() as f64 / n as f64;
    Ok((hits(&sim), hits(&sim_t)))
}

/// Token-level F1 over multisets of normalized tokens.
pub fn token_f1(hypothesis: &str, reference: &str) -> Result<f64> {
    let h = split_words(hypothesis);
    let r = split_words(reference);
    if r.is_empty() {
        return Err(Error::invalid("empty reference caption"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &h {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / h.len() as f64;
    let q = overlap as f64 / r.len() as f64;
    Ok(2.0 * p * q / (p + q))
}

/// Length of the longest common subsequence, bit-parallel over `a`.
pub fn lcs_len<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: HashMap<&T, Vec<u64>> = HashMap::new();
    for (i, x) in a.iter().enumerate() {
        masks.entry(x).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    let zero = vec![0u64; words];
    // v has a zero bit wherever the LCS row increases
    let mut v = vec![u64::MAX; words];
    for y in b {
        let m = masks.get(y).unwrap_or(&zero);
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = u64::from(c1 || c2);
            v[w] = s2 | (v[w] & !m[w]);
        }
    }
    let mut ones = 0;
    for (w, x) in v.iter().enumerate() {
        let valid = if w + 1 == words && a.len() % 64 != 0 { (1u64 << (a.len() % 64)) - 1 } else { u64::MAX };
        ones += (!x & valid).count_ones() as usize;
    }
    ones
}

/// ROUGE-L F-measure from the token LCS.
pub fn rouge_l(hypothesis: &str, reference: &str) -> Result<f64> {
    let h = split_words(hypothesis);
    let r = split_words(reference);
    if r.is_empty() {
        return Err(Error::invalid("empty reference caption"));
    }
    let l = lcs_len(&h, &r);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / h.len() as f64;
    let q = l as f64 / r.len() as f64;
    Ok(2.0 * p * q / (p + q))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaptionScores {
    pub token_f1: f64,
    pub rouge_l: f64,
}

pub fn caption_metrics(hypothesis: &str, reference: &str) -> Result<CaptionScores> {
    Ok(CaptionScores { token_f1: token_f1(hypothesis, reference)?, rouge_l: rouge_l(hypothesis, reference)? })
}
