//! Statistical summaries and temporal pattern detectors over one channel.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub channel: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Population statistics over the valid entries of `series`.
pub fn summarize_channel(channel: usize, series: &[f32], valid: &[bool]) -> Result<StatSummary> {
    check_lengths(series, valid)?;
    let xs = || series.iter().zip(valid).filter(|(_, &ok)| ok).map(|(&x, _)| f64::from(x));
    let n = xs().count();
    if n == 0 {
        return Err(Error::invalid(format!("channel {channel} has no valid entries")));
    }
    let mean = xs().sum::<f64>() / n as f64;
    let var = xs().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let (min, max) = xs().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    // Summation error can push the mean a hair outside [min, max] on constant input.
    Ok(StatSummary { channel, mean: mean.clamp(min, max), std: var.sqrt(), min, max })
}

fn check_lengths(series: &[f32], valid: &[bool]) -> Result<()> {
    if series.len() != valid.len() {
        return Err(Error::Shape(format!("series has {} points but mask has {}", series.len(), valid.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrendKind {
    Increasing,
    Decreasing,
    Stable,
    Spike,
    Drop,
}

impl TrendKind {
    pub fn word(self) -> &'static str {
        match self {
            TrendKind::Increasing => "increasing",
            TrendKind::Decreasing => "decreasing",
            TrendKind::Stable => "stable",
            TrendKind::Spike => "spike",
            TrendKind::Drop => "drop",
        }
    }

    pub fn is_point(self) -> bool {
        matches!(self, TrendKind::Spike | TrendKind::Drop)
    }
}

/// A trend over `[start, end]` (inclusive) or a point event where
/// `start == end == minute`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendEvent {
    pub channel: usize,
    pub kind: TrendKind,
    pub start: usize,
    pub end: usize,
}

impl TrendEvent {
    pub fn point(channel: usize, kind: TrendKind, minute: usize) -> Self {
        TrendEvent { channel, kind, start: minute, end: minute }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendParams {
    pub window_len: usize,
    pub stride: usize,
    /// Slope threshold in channel-std units per minute.
    pub slope_threshold: f64,
}

impl Default for TrendParams {
    fn default() -> Self {
        // 0.5 channel-std per hour
        TrendParams { window_len: 60, stride: 20, slope_threshold: 0.5 / 60.0 }
    }
}

pub const DEFAULT_SPIKE_SIGMA: f64 = 3.0;
const SCALE_FLOOR: f64 = 1e-6;

fn valid_std(series: &[f32], valid: &[bool]) -> Option<f64> {
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return None;
    }
    let xs = || series.iter().zip(valid).filter(|(_, &ok)| ok).map(|(&x, _)| f64::from(x));
    let mean = xs().sum::<f64>() / n as f64;
    Some((xs().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt())
}

/// Window start positions: every `stride` minutes while the window fits, or a
/// single window over the whole series when it is shorter than `window_len`.
pub fn window_starts(len: usize, params: &TrendParams) -> Vec<usize> {
    if len < params.window_len {
        return if len >= 2 { vec![0] } else { vec![] };
    }
    (0..=len - params.window_len).step_by(params.stride.max(1)).collect()
}

/// Sliding-window trend classification with run merging.
///
/// Each window's least-squares slope over its valid points is divided by the
/// channel's std over the whole series and compared against the threshold.
/// Windows with fewer than two valid points are skipped and break runs.
/// Consecutive windows of the same kind merge into one event spanning their
/// union.
pub fn detect_trends(channel: usize, series: &[f32], valid: &[bool], params: &TrendParams) -> Result<Vec<TrendEvent>> {
    check_lengths(series, valid)?;
    if params.window_len < 2 {
        return Err(Error::invalid("trend window must span at least two minutes"));
    }
    let Some(scale) = valid_std(series, valid) else { return Ok(Vec::new()) };
    let scale = scale.max(SCALE_FLOOR);
    let len = series.len();
    let mut events: Vec<TrendEvent> = Vec::new();
    let mut run_open = false;
    for start in window_starts(len, params) {
        let end = (start + params.window_len).min(len);
        let Some(slope) = window_slope(&series[start..end], &valid[start..end]) else {
            run_open = false;
            continue;
        };
        let s = slope / scale;
        let kind = if s > params.slope_threshold {
            TrendKind::Increasing
        } else if s < -params.slope_threshold {
            TrendKind::Decreasing
        } else {
            TrendKind::Stable
        };
        match events.last_mut() {
            Some(last) if run_open && last.kind == kind => last.end = end - 1,
            _ => events.push(TrendEvent { channel, kind, start, end: end - 1 }),
        }
        run_open = true;
    }
    Ok(events)
}

/// Centered least-squares slope against the local minute index.
fn window_slope(xs: &[f32], valid: &[bool]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(valid)
        .enumerate()
        .filter(|(_, (_, &ok))| ok)
        .map(|(t, (&x, _))| (t as f64, f64::from(x)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let xm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - xm)).sum();
    Some(sxy / sxx)
}

/// Flags minutes beyond `mean ± k·std`; each run of consecutive flags of the
/// same kind collapses to its extremal minute (earliest on ties).
pub fn detect_spikes(channel: usize, series: &[f32], valid: &[bool], k_sigma: f64) -> Result<Vec<TrendEvent>> {
    check_lengths(series, valid)?;
    if !(k_sigma > 0.0) {
        return Err(Error::invalid("spike threshold must be positive"));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mean = series.iter().zip(valid).filter(|(_, &ok)| ok).map(|(&x, _)| f64::from(x)).sum::<f64>() / n as f64;
    let std = valid_std(series, valid).unwrap_or(0.0);
    let (hi, lo) = (mean + k_sigma * std, mean - k_sigma * std);

    let mut events = Vec::new();
    let mut current: Option<(TrendKind, usize, f64)> = None;
    for (t, (&x, &ok)) in series.iter().zip(valid).enumerate() {
        let x = f64::from(x);
        let kind = match () {
            _ if ok && x > hi => Some(TrendKind::Spike),
            _ if ok && x < lo => Some(TrendKind::Drop),
            _ => None,
        };
        current = match (current, kind) {
            (Some((ck, best_t, best_x)), Some(k)) if ck == k => {
                let better = if k == TrendKind::Spike { x > best_x } else { x < best_x };
                Some(if better { (k, t, x) } else { (ck, best_t, best_x) })
            }
            (prev, next) => {
                if let Some((ck, bt, _)) = prev {
                    events.push(TrendEvent::point(channel, ck, bt));
                }
                next.map(|k| (k, t, x))
            }
        };
    }
    if let Some((ck, bt, _)) = current {
        events.push(TrendEvent::point(channel, ck, bt));
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_summary() {
        let s = summarize_channel(0, &[5.0; 100], &[true; 100]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (5.0, 0.0, 5.0, 5.0));
        assert!(summarize_channel(0, &[5.0; 3], &[false; 3]).is_err());
    }

    #[test]
    fn summary_ignores_invalid() {
        let s = summarize_channel(2, &[1.0, 100.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
    }

    #[test]
    fn constant_series_single_stable_trend() {
        let ev = detect_trends(0, &[7.0; 1440], &[true; 1440], &TrendParams::default()).unwrap();
        assert_eq!(ev, vec![TrendEvent { channel: 0, kind: TrendKind::Stable, start: 0, end: 1439 }]);
    }

    #[test]
    fn ramp_detected_as_decreasing() {
        let mut xs = vec![100.0f32; 1440];
        for t in 680..=800 {
            xs[t] = 100.0 - (t - 680) as f32 * 0.2;
        }
        for t in 801..1440 {
            xs[t] = xs[800];
        }
        let ev = detect_trends(0, &xs, &[true; 1440], &TrendParams::default()).unwrap();
        let dec: Vec<_> = ev.iter().filter(|e| e.kind == TrendKind::Decreasing).collect();
        assert_eq!(dec.len(), 1);
        assert!(dec[0].start <= 700 && dec[0].end >= 780, "{:?}", dec[0]);
    }

    #[test]
    fn short_series_uses_one_window() {
        let xs: Vec<f32> = (0..10).map(|t| t as f32).collect();
        let ev = detect_trends(1, &xs, &[true; 10], &TrendParams::default()).unwrap();
        assert_eq!(ev, vec![TrendEvent { channel: 1, kind: TrendKind::Increasing, start: 0, end: 9 }]);
        assert!(detect_trends(1, &xs, &[true; 10], &TrendParams { window_len: 1, ..TrendParams::default() }).is_err());
    }

    #[test]
    fn impulse_is_single_spike() {
        let mut xs = vec![0.0f32; 1440];
        xs[720] = 120.0;
        let ev = detect_spikes(10, &xs, &[true; 1440], DEFAULT_SPIKE_SIGMA).unwrap();
        assert_eq!(ev, vec![TrendEvent::point(10, TrendKind::Spike, 720)]);
        assert!(detect_spikes(10, &[3.0; 50], &[true; 50], 3.0).unwrap().is_empty());
        assert!(detect_spikes(10, &[3.0; 50], &[true; 50], 0.0).is_err());
    }

    #[test]
    fn consecutive_flags_collapse_to_extremum() {
        let mut xs = vec![0.0f32; 1000];
        xs[500] = 50.0;
        xs[501] = 80.0;
        xs[502] = 60.0;
        xs[800] = -90.0;
        let ev = detect_spikes(3, &xs, &[true; 1000], 3.0).unwrap();
        assert_eq!(ev, vec![TrendEvent::point(3, TrendKind::Spike, 501), TrendEvent::point(3, TrendKind::Drop, 800)]);
    }
}
