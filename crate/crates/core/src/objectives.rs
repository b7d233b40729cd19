//! Contrastive and captioning losses with their gradients.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::text::{TokenId, PAD};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Standard InfoNCE: the positive pair is part of the softmax denominator.
    #[default]
    IncludePositive,
    /// Denominator sums over `j != i` only.
    ExcludePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_con: f64,
    pub lambda_cap: f64,
    pub tau: f64,
    pub denominator: DenominatorMode,
}

pub const DEFAULT_TAU: f64 = 0.01;

impl Default for LossConfig {
    fn default() -> Self {
        Self::coca()
    }
}

impl LossConfig {
    pub fn clip() -> Self {
        Self { lambda_con: 1.0, lambda_cap: 0.0, tau: DEFAULT_TAU, denominator: DenominatorMode::default() }
    }

    pub fn cap() -> Self {
        Self { lambda_con: 0.0, lambda_cap: 1.0, ..Self::clip() }
    }

    pub fn coca() -> Self {
        Self { lambda_con: 1.0, lambda_cap: 1.0, ..Self::clip() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "clip" => Some(Self::clip()),
            "cap" => Some(Self::cap()),
            "coca" => Some(Self::coca()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.lambda_con) || !ok(self.lambda_cap) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        if self.lambda_con + self.lambda_cap <= 0.0 {
            return Err(Error::config("at least one of lambda_con and lambda_cap must be positive"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        Ok(())
    }

    pub fn uses_contrastive(&self) -> bool {
        self.lambda_con > 0.0
    }

    pub fn uses_captioning(&self) -> bool {
        self.lambda_cap > 0.0
    }
}

/// Row-wise `-log softmax(row)[i]` terms for the diagonal of `logits`, with
/// the gradient of their sum with respect to `logits`.
fn diagonal_xent(logits: &Array2<f64>, mode: DenominatorMode) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let in_denominator = |j: usize| mode == DenominatorMode::IncludePositive || j != i;
        let max = (0..n).filter(|&j| in_denominator(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&j| in_denominator(j)).map(|j| (row[j] - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[i];
        for j in (0..n).filter(|&j| in_denominator(j)) {
            grad[[i, j]] += (row[j] - lse).exp();
        }
        grad[[i, i]] -= 1.0;
    }
    (total, grad)
}

/// Symmetric contrastive loss over paired rows of `s` and `v` with its
/// gradients with respect to both.
///
/// `L = (1/N) sum_i [ -log p(v_i | s_i) - log p(s_i | v_i) ]` with similarities
/// `s_i . v_j / tau`.
pub fn contrastive_loss_grad(
    s: &Array2<f64>,
    v: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = s.nrows();
    if n == 0 || s.dim() != v.dim() {
        return Err(Error::Shape(format!("contrastive batch shapes {:?} and {:?}", s.dim(), v.dim())));
    }
    if n == 1 && cfg.denominator == DenominatorMode::ExcludePositive {
        return Err(Error::invalid("excluding the positive pair leaves an empty denominator for N = 1"));
    }
    let logits = s.dot(&v.t()) / cfg.tau;
    let (l_st, g_st) = diagonal_xent(&logits, cfg.denominator);
    let logits_t = logits.t().to_owned();
    let (l_ts, g_ts) = diagonal_xent(&logits_t, cfg.denominator);
    let nf = n as f64;
    // d logits, combining both directions
    let g = (g_st + g_ts.t()) / (nf * cfg.tau);
    let ds = g.dot(v);
    let dv = g.t().dot(s);
    Ok(((l_st + l_ts) / nf, ds, dv))
}

pub fn contrastive_loss(s: &Array2<f64>, v: &Array2<f64>, cfg: &LossConfig) -> Result<f64> {
    contrastive_loss_grad(s, v, cfg).map(|r| r.0)
}

/// Sum over non-PAD targets of `-log softmax(logits[t])[target[t]]`, the
/// number of counted positions, and the gradient of the sum.
pub fn token_xent_sum_grad(logits: &Array2<f64>, targets: &[TokenId]) -> Result<(f64, usize, Array2<f64>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.nrows(), targets.len())));
    }
    let vocab = logits.ncols();
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    let mut count = 0;
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y as usize >= vocab {
            return Err(Error::Shape(format!("target id {y} outside vocabulary of {vocab}")));
        }
        let row = logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
        count += 1;
        let mut g = grad.row_mut(t);
        g.zip_mut_with(&row, |gi, &x| *gi = (x - lse).exp());
        g[y as usize] -= 1.0;
    }
    Ok((total, count, grad))
}

/// Mean over non-PAD positions of the token cross-entropy.
pub fn captioning_loss(logits: &Array2<f64>, targets: &[TokenId]) -> Result<f64> {
    let (sum, count, _) = token_xent_sum_grad(logits, targets)?;
    if count == 0 {
        return Err(Error::invalid("captioning loss over an all-PAD target"));
    }
    Ok(sum / count as f64)
}

/// Embeddings and decoder outputs for one batch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    /// `N x embed` unit rows, empty when the contrastive term is off.
    pub sensor: Array2<f64>,
    pub text: Array2<f64>,
    /// Per-sample decoder logits and targets, empty when captioning is off.
    pub logits: Vec<Array2<f64>>,
    pub targets: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub contrastive: f64,
    pub captioning: f64,
}

/// Captioning loss pooled over every non-PAD position in the batch.
pub fn batch_captioning_loss(logits: &[Array2<f64>], targets: &[Vec<TokenId>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!("{} logit blocks for {} targets", logits.len(), targets.len())));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (l, t) in logits.iter().zip(targets) {
        let (s, c, _) = token_xent_sum_grad(l, t)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::invalid("captioning loss over an all-PAD batch"));
    }
    Ok(sum / count as f64)
}

pub fn combined_loss(batch: &Batch, cfg: &LossConfig) -> Result<LossParts> {
    cfg.validate()?;
    let mut parts = LossParts::default();
    if cfg.uses_contrastive() {
        parts.contrastive = contrastive_loss(&batch.sensor, &batch.text, cfg)?;
    }
    if cfg.uses_captioning() {
        parts.captioning = batch_captioning_loss(&batch.logits, &batch.targets)?;
    }
    parts.total = cfg.lambda_con * parts.contrastive + cfg.lambda_cap * parts.captioning;
    Ok(parts)
}

/// Unit-normalizes each row; used by tests and evaluation on detached arrays.
pub fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    out
}
