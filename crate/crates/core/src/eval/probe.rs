//! Linear probing: class-weighted multinomial logistic regression on frozen embeddings.

use log::{debug, warn};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{auroc_macro_ovr, balanced_accuracy, macro_f1};
use crate::rng::{hash_str, rng_for};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Ridge penalty on the weights (biases are not penalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l2: 1e-3, max_iter: 2000, tol: 1e-6 }
    }
}

/// Per-example loss weights `n / (K * n_c)` for `K` classes present.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = labels.len() as f64;
    labels.iter().map(|&y| n / (present * counts[y] as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `D x K`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// Weighted mean cross-entropy plus ridge, and its gradient.
pub fn probe_objective(
    probe: &LinearProbe,
    x: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
    l2: f64,
) -> (f64, LinearProbe) {
    let logits = x.dot(&probe.w) + &probe.b;
    let total_w: f64 = weights.iter().sum();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
        loss += weights[i] * (lse - row[y]);
    }
    loss = loss / total_w + 0.5 * l2 * probe.w.mapv(|v| v * v).sum();
    let mut d = softmax_rows(logits);
    for (i, &y) in labels.iter().enumerate() {
        d[[i, y]] -= 1.0;
        d.row_mut(i).mapv_inplace(|v| v * weights[i] / total_w);
    }
    let gw = x.t().dot(&d) + &(&probe.w * l2);
    let gb = d.sum_axis(Axis(0));
    (loss, LinearProbe { w: gw, b: gb })
}

impl LinearProbe {
    /// Fits on `x` (`N x D`) with labels in `0..n_classes` by full-batch
    /// gradient descent with Armijo backtracking.
    pub fn fit(x: &Array2<f64>, labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, dim) = x.dim();
        if n != labels.len() || n == 0 {
            return Err(Error::Shape(format!("{n} rows for {} labels", labels.len())));
        }
        if labels.iter().any(|&y| y >= n_classes) {
            return Err(Error::invalid("label outside class range"));
        }
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(Error::invalid("linear probe needs at least two classes in the training set"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite probe features".into()));
        }
        let weights = class_weights(labels, n_classes);
        let mut p = LinearProbe { w: Array2::zeros((dim, n_classes)), b: Array1::zeros(n_classes) };
        let (mut f, mut g) = probe_objective(&p, x, labels, &weights, cfg.l2);
        let mut step = 1.0;
        let mut iters = 0;
        while iters < cfg.max_iter {
            let gg = g.w.mapv(|v| v * v).sum() + g.b.mapv(|v| v * v).sum();
            if gg.sqrt() < cfg.tol {
                break;
            }
            step *= 2.0;
            loop {
                let cand = LinearProbe { w: &p.w - &(&g.w * step), b: &p.b - &(&g.b * step) };
                let (fc, gc) = probe_objective(&cand, x, labels, &weights, cfg.l2);
                if fc <= f - 1e-4 * step * gg {
                    p = cand;
                    f = fc;
                    g = gc;
                    break;
                }
                step *= 0.5;
                if step < 1e-12 {
                    debug!("line search stalled after {iters} iterations");
                    return Ok(p);
                }
            }
            iters += 1;
        }
        if iters == cfg.max_iter {
            warn!("linear probe stopped at max_iter = {} with loss {f:.6}", cfg.max_iter);
        }
        Ok(p)
    }

    /// Class probabilities, `N x K`.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(x.dot(&self.w) + &self.b)
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        argmax_rows(&(x.dot(&self.w) + &self.b))
    }
}

pub(crate) fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auroc: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
}

impl ClassificationMetrics {
    pub fn from_scores(scores: &Array2<f64>, labels: &[usize]) -> Result<Self> {
        let preds = argmax_rows(scores);
        Ok(Self {
            auroc: auroc_macro_ovr(scores, labels)?,
            macro_f1: macro_f1(&preds, labels)?,
            balanced_accuracy: balanced_accuracy(&preds, labels)?,
        })
    }
}

/// Fits on the training split and scores the test split.
pub fn linear_probe_eval(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ClassificationMetrics> {
    let probe = LinearProbe::fit(train_x, train_y, n_classes, cfg)?;
    ClassificationMetrics::from_scores(&probe.predict_proba(test_x), test_y)
}

pub const FEW_SHOT_SIZES: [usize; 4] = [5, 10, 20, 50];
pub const FEW_SHOT_SEEDS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPoint {
    /// Examples per class.
    pub n: usize,
    pub auroc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Row indices holding `n` examples of every class, drawn with a seeded shuffle
/// and returned in ascending order. Classes with fewer examples contribute all of them.
pub fn few_shot_subset(labels: &[usize], n_classes: usize, n: usize, seed: u64, draw: u64) -> Vec<usize> {
    let mut out = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng_for(seed, &[hash_str("few-shot"), n as u64, draw, c as u64]));
        idx.truncate(n);
        out.extend(idx);
    }
    out.sort_unstable();
    out
}

/// Linear-probe AUROC with `n` training examples per class, averaged over seeded draws.
#[allow(clippy::too_many_arguments)]
pub fn few_shot_eval(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
    n_classes: usize,
    sizes: &[usize],
    draws: u64,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<Vec<FewShotPoint>> {
    if draws == 0 {
        return Err(Error::invalid("few-shot evaluation needs at least one draw"));
    }
    sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::invalid("few-shot size must be positive"));
            }
            for c in 0..n_classes {
                let have = train_y.iter().filter(|&&y| y == c).count();
                if have > 0 && have < n {
                    warn!("{n}-shot: class {c} has only {have} training examples");
                }
            }
            let auroc = (0..draws)
                .map(|d| {
                    let idx = few_shot_subset(train_y, n_classes, n, seed, d);
                    let x = train_x.select(Axis(0), &idx);
                    let y: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
                    Ok(linear_probe_eval(&x, &y, test_x, test_y, n_classes, cfg)?.auroc)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = auroc.iter().sum::<f64>() / auroc.len() as f64;
            let var = auroc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / auroc.len() as f64;
            Ok(FewShotPoint { n, auroc, mean, std: var.sqrt() })
        })
        .collect()
}
