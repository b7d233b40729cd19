//! Three-level hierarchical captions: statistical summaries, structural
//! trend and spike events, and semantic activity and mood narratives.

mod features;
mod templates;

pub use features::{
    detect_spikes, detect_trends, summarize_channel, window_starts, StatSummary, TrendEvent, TrendKind,
    TrendParams, DEFAULT_SPIKE_SIGMA,
};
pub use templates::{
    Slot, Template, TemplateKind, TemplatePool, DEFAULT_TEMPLATES, SEMANTIC_POOL_SIZE, STATISTICAL_POOL_SIZE,
    STRUCTURAL_POOL_SIZE,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{EventLog, SensorDay, MINUTES_PER_DAY, N_CHANNELS};
use crate::{Error, Result};

/// Channel names as they read inside caption sentences.
pub const CAPTION_NAMES: [&str; N_CHANNELS] = [
    "Heart rate",
    "Shannon entropy of RR intervals",
    "Shannon entropy of RR differences",
    "RMSSD",
    "SDNN",
    "RR percent valid",
    "RR 80th percentile",
    "RR 20th percentile",
    "RR median",
    "Heart rate at rest",
    "steps",
    "jerk autocorrelation ratio",
    "log energy",
    "covariance condition",
    "log energy ratio",
    "zero crossing std",
    "zero crossing average",
    "axis mean",
    "kurtosis",
    "sleep coefficient",
    "skin conductance",
    "skin conductance slope",
    "lead contact counts",
    "skin temperature",
    "skin temperature slope",
    "altitude std",
];

pub const NO_EVENTS_SENTENCE: &str = "No recorded activities.";
pub const DEFAULT_SENTENCE_BUDGET: usize = 8;

/// One decimal place, half away from zero, never "-0.0".
pub fn format_value(x: f64) -> String {
    let r = (x * 10.0).round() / 10.0;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.1}")
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(f) => f.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

fn choose<'p, R: Rng>(rng: &mut R, templates: &[&'p Template]) -> &'p Template {
    templates[rng.random_range(0..templates.len())]
}

pub fn render_statistical<R: Rng>(s: &StatSummary, pool: &TemplatePool, rng: &mut R) -> Result<String> {
    let t = choose(rng, &pool.of_kind(TemplateKind::Statistic));
    render_statistical_with(t, s)
}

pub fn render_statistical_with(t: &Template, s: &StatSummary) -> Result<String> {
    let name = CAPTION_NAMES[s.channel];
    t.render(|slot| {
        Some(match slot {
            Slot::Name => name.to_string(),
            Slot::NameCap => capitalize(name),
            Slot::Mean => format_value(s.mean),
            Slot::Std => format_value(s.std),
            Slot::Min => format_value(s.min),
            Slot::Max => format_value(s.max),
            _ => return None,
        })
    })
}

pub fn render_structural<R: Rng>(e: &TrendEvent, pool: &TemplatePool, rng: &mut R) -> Result<String> {
    let kind = if e.kind.is_point() { TemplateKind::Point } else { TemplateKind::Trend };
    let t = choose(rng, &pool.of_kind(kind));
    render_structural_with(t, e)
}

pub fn render_structural_with(t: &Template, e: &TrendEvent) -> Result<String> {
    let name = CAPTION_NAMES[e.channel];
    let point = e.kind.is_point();
    t.render(|slot| {
        Some(match slot {
            Slot::Name => name.to_string(),
            Slot::NameCap => capitalize(name),
            Slot::Trend if !point => e.kind.word().to_string(),
            Slot::Start if !point => e.start.to_string(),
            Slot::End if !point => e.end.to_string(),
            Slot::Event if point => e.kind.word().to_string(),
            Slot::EventCap if point => capitalize(e.kind.word()),
            Slot::Minute if point => e.start.to_string(),
            _ => return None,
        })
    })
}

fn render_activity(t: &Template, label: &str, start: usize, end: usize) -> Result<String> {
    t.render(|slot| {
        Some(match slot {
            Slot::Label => label.to_string(),
            Slot::Start => start.to_string(),
            Slot::End => end.to_string(),
            _ => return None,
        })
    })
}

fn render_mood(t: &Template, mood: &str, minute: usize) -> Result<String> {
    t.render(|slot| {
        Some(match slot {
            Slot::Mood => mood.to_string(),
            Slot::Minute => minute.to_string(),
            _ => return None,
        })
    })
}

/// One sentence per activity, then one per mood entry, each with a randomly
/// chosen template. Minute numbers are copied from the log verbatim.
pub fn render_semantic<R: Rng>(log: &EventLog, pool: &TemplatePool, rng: &mut R) -> Result<Vec<String>> {
    let acts = pool.of_kind(TemplateKind::Activity);
    let moods = pool.of_kind(TemplateKind::Mood);
    let mut out = Vec::with_capacity(log.activities.len() + log.moods.len());
    for a in &log.activities {
        out.push(render_activity(choose(rng, &acts), &a.label, a.start, a.end)?);
    }
    for m in &log.moods {
        out.push(render_mood(choose(rng, &moods), &m.label, m.minute)?);
    }
    Ok(out)
}

/// Renders an activity with a specific template (index into the activity subset).
pub fn render_semantic_with(pool: &TemplatePool, template: usize, label: &str, start: usize, end: usize) -> Result<String> {
    let acts = pool.of_kind(TemplateKind::Activity);
    let t = acts.get(template).ok_or_else(|| Error::invalid(format!("no activity template {template}")))?;
    render_activity(t, label, start, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Statistical,
    Structural,
    Semantic,
}

/// A nonempty subset of caption levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaptionVariant {
    pub statistical: bool,
    pub structural: bool,
    pub semantic: bool,
}

impl CaptionVariant {
    pub const STRUCT_SEM: CaptionVariant = CaptionVariant { statistical: false, structural: true, semantic: true };

    pub fn new(statistical: bool, structural: bool, semantic: bool) -> Result<Self> {
        if !(statistical || structural || semantic) {
            return Err(Error::invalid("caption variant needs at least one level"));
        }
        Ok(CaptionVariant { statistical, structural, semantic })
    }

    /// The seven nonempty combinations in ablation-table order.
    pub fn all() -> [CaptionVariant; 7] {
        let v = |a, b, c| CaptionVariant { statistical: a, structural: b, semantic: c };
        [
            v(true, false, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(false, true, true),
            v(true, true, false),
            v(true, true, true),
        ]
    }

    pub fn levels(&self) -> BTreeSet<Level> {
        let mut s = BTreeSet::new();
        if self.statistical {
            s.insert(Level::Statistical);
        }
        if self.structural {
            s.insert(Level::Structural);
        }
        if self.semantic {
            s.insert(Level::Semantic);
        }
        s
    }

    pub fn code(&self) -> u64 {
        u64::from(self.statistical) | u64::from(self.structural) << 1 | u64::from(self.semantic) << 2
    }
}

impl Default for CaptionVariant {
    fn default() -> Self {
        CaptionVariant::STRUCT_SEM
    }
}

impl fmt::Display for CaptionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.statistical, "stat"), (self.structural, "struct"), (self.semantic, "sem")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for CaptionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut a, mut b, mut c) = (false, false, false);
        for part in s.split('+').map(str::trim) {
            let slot = match part {
                "stat" | "statistical" => &mut a,
                "struct" | "structural" => &mut b,
                "sem" | "semantic" => &mut c,
                _ => return Err(Error::invalid(format!("unknown caption level {part:?} in {s:?}"))),
            };
            if *slot {
                return Err(Error::invalid(format!("caption level {part:?} repeated in {s:?}")));
            }
            *slot = true;
        }
        CaptionVariant::new(a, b, c)
    }
}

impl Serialize for CaptionVariant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CaptionVariant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Statistic,
    Increasing,
    Decreasing,
    Stable,
    Spike,
    Drop,
    Activity,
    Mood,
    Fallback,
}

impl From<TrendKind> for SpanKind {
    fn from(k: TrendKind) -> Self {
        match k {
            TrendKind::Increasing => SpanKind::Increasing,
            TrendKind::Decreasing => SpanKind::Decreasing,
            TrendKind::Stable => SpanKind::Stable,
            TrendKind::Spike => SpanKind::Spike,
            TrendKind::Drop => SpanKind::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub levels: BTreeSet<Level>,
    pub source_spans: Vec<SourceSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionParams {
    pub budget: usize,
    pub trend: TrendParams,
    pub spike_sigma: f64,
}

impl Default for CaptionParams {
    fn default() -> Self {
        CaptionParams { budget: DEFAULT_SENTENCE_BUDGET, trend: TrendParams::default(), spike_sigma: DEFAULT_SPIKE_SIGMA }
    }
}

enum Candidate {
    Stat(StatSummary),
    Pattern(TrendEvent),
    Activity(usize),
    Mood(usize),
}

fn statistical_candidates(day: &SensorDay) -> Vec<Candidate> {
    (0..N_CHANNELS)
        .filter_map(|c| summarize_channel(c, day.channel(c), day.channel_mask(c)).ok().map(Candidate::Stat))
        .collect()
}

fn structural_candidates(day: &SensorDay, params: &CaptionParams) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for c in 0..N_CHANNELS {
        let (xs, ok) = (day.channel(c), day.channel_mask(c));
        let mut evs = detect_trends(c, xs, ok, &params.trend)?;
        evs.extend(detect_spikes(c, xs, ok, params.spike_sigma)?);
        evs.sort_by_key(|e| (e.start, e.end));
        out.extend(evs.into_iter().map(Candidate::Pattern));
    }
    Ok(out)
}

/// Round-robin allocation of `budget` slots over levels with candidates.
fn allocate(counts: &[usize], budget: usize) -> Vec<usize> {
    let mut take = vec![0; counts.len()];
    let mut left = budget;
    while left > 0 {
        let mut progressed = false;
        for (i, &n) in counts.iter().enumerate() {
            if left > 0 && take[i] < n {
                take[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    take
}

/// Builds one caption: candidate sentences per enabled level, a random
/// subset of each within the sentence budget, ordered statistical,
/// structural, semantic. Deterministic for a given rng state.
pub fn compose_caption<R: Rng>(
    day: &SensorDay,
    log: &EventLog,
    variant: CaptionVariant,
    pool: &TemplatePool,
    params: &CaptionParams,
    rng: &mut R,
) -> Result<Caption> {
    let mut groups: Vec<Vec<Candidate>> = Vec::new();
    if variant.statistical {
        groups.push(statistical_candidates(day));
    }
    if variant.structural {
        groups.push(structural_candidates(day, params)?);
    }
    if variant.semantic {
        let mut sem: Vec<Candidate> = (0..log.activities.len()).map(Candidate::Activity).collect();
        sem.extend((0..log.moods.len()).map(Candidate::Mood));
        groups.push(sem);
    }
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let take = allocate(&counts, params.budget);

    let mut sentences = Vec::new();
    let mut spans = Vec::new();
    for (group, k) in groups.iter().zip(take) {
        let mut chosen = sample(rng, group.len(), k).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let (sentence, span) = match &group[i] {
                Candidate::Stat(s) => (
                    render_statistical(s, pool, rng)?,
                    SourceSpan { kind: SpanKind::Statistic, start: 0, end: MINUTES_PER_DAY - 1 },
                ),
                Candidate::Pattern(e) => {
                    (render_structural(e, pool, rng)?, SourceSpan { kind: e.kind.into(), start: e.start, end: e.end })
                }
                Candidate::Activity(a) => {
                    let a = &log.activities[*a];
                    let t = choose(rng, &pool.of_kind(TemplateKind::Activity));
                    (render_activity(t, &a.label, a.start, a.end)?, SourceSpan { kind: SpanKind::Activity, start: a.start, end: a.end })
                }
                Candidate::Mood(m) => {
                    let m = &log.moods[*m];
                    let t = choose(rng, &pool.of_kind(TemplateKind::Mood));
                    (render_mood(t, &m.label, m.minute)?, SourceSpan { kind: SpanKind::Mood, start: m.minute, end: m.minute })
                }
            };
            sentences.push(sentence);
            spans.push(span);
        }
    }
    if sentences.is_empty() {
        sentences.push(NO_EVENTS_SENTENCE.to_string());
        spans.push(SourceSpan { kind: SpanKind::Fallback, start: 0, end: MINUTES_PER_DAY - 1 });
    }
    Ok(Caption { text: sentences.join(" "), levels: variant.levels(), source_spans: spans })
}

/// One caption-corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub person_id: u64,
    pub day_id: u64,
    pub text: String,
    pub levels: BTreeSet<Level>,
    pub variant: CaptionVariant,
}

pub fn encode_caption_corpus(records: &[CaptionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_caption_corpus(text: &str) -> Result<Vec<CaptionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: CaptionRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("caption corpus line {}: {e}", lineno + 1)))?;
        if r.text.is_empty() || r.levels.is_empty() {
            return Err(Error::format(format!("caption corpus line {}: empty text or levels", lineno + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
