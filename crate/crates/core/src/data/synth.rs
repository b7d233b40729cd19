//! Deterministic wearable-day generator.
//!
//! Each channel follows a sinusoidal diurnal baseline plus Gaussian noise.
//! Scheduled activity segments add a per-channel offset and rescale the noise
//! inside the segment. Profiles are strongly separated so that class identity
//! is recoverable from the signal.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{validity_fraction, ActivityEvent, EventLog, MoodEvent, SensorDay, MINUTES_PER_DAY, N_CHANNELS};
use crate::rng::{derive_seed, hash_str, rng_for};
use crate::{Error, Result};

/// Days below this valid fraction are dropped by dataset builders.
pub const MIN_VALID_FRACTION: f64 = 0.2;

pub const MOOD_LABELS: [&str; 6] = ["Happy", "Calm", "Excited", "Tired", "Stressed", "Frustrated"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEffect {
    pub channel: usize,
    /// Additive shift in channel units.
    pub offset: f64,
    /// Multiplier on the baseline noise inside the segment.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub label: String,
    pub effects: Vec<ChannelEffect>,
}

impl ActivityProfile {
    pub fn validate(&self) -> Result<()> {
        match self.effects.iter().find(|e| e.channel >= N_CHANNELS) {
            Some(e) => Err(Error::invalid(format!("profile {:?} references channel {}", self.label, e.channel))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub profile: ActivityProfile,
    pub start: usize,
    /// Inclusive last minute.
    pub end: usize,
}

/// (mean, diurnal amplitude, noise std, lower bound, upper bound)
type Baseline = (f64, f64, f64, f64, f64);

const INF: f64 = f64::INFINITY;

static BASELINES: [Baseline; N_CHANNELS] = [
    (70.0, 8.0, 3.0, 30.0, 220.0),
    (3.0, 0.2, 0.1, 0.0, INF),
    (2.6, 0.2, 0.1, 0.0, INF),
    (40.0, 8.0, 5.0, 0.0, INF),
    (50.0, 8.0, 5.0, 0.0, INF),
    (85.0, 5.0, 4.0, 0.0, 100.0),
    (900.0, 60.0, 25.0, 250.0, 2000.0),
    (800.0, 60.0, 25.0, 250.0, 2000.0),
    (850.0, 60.0, 25.0, 250.0, 2000.0),
    (62.0, 3.0, 1.0, 30.0, 120.0),
    (4.0, 4.0, 3.0, 0.0, INF),
    (0.5, 0.05, 0.05, 0.0, 1.0),
    (3.0, 0.5, 0.3, -INF, INF),
    (10.0, 2.0, 1.5, 1.0, INF),
    (-0.5, 0.1, 0.1, -INF, INF),
    (2.0, 0.3, 0.2, 0.0, INF),
    (3.0, 0.4, 0.3, 0.0, INF),
    (0.0, 0.1, 0.1, -INF, INF),
    (3.0, 0.5, 0.5, -INF, INF),
    (8.0, 3.0, 1.0, 0.0, 16.0),
    (2.0, 0.5, 0.2, 0.0, INF),
    (0.0, 0.01, 0.02, -INF, INF),
    (30.0, 5.0, 3.0, 0.0, INF),
    (33.0, 1.0, 0.3, 20.0, 42.0),
    (0.0, 0.005, 0.01, -INF, INF),
    (0.05, 0.01, 0.02, 0.0, INF),
];

fn effects(list: &[(usize, f64, f64)]) -> Vec<ChannelEffect> {
    list.iter().map(|&(channel, offset, amplitude)| ChannelEffect { channel, offset, amplitude }).collect()
}

/// Built-in activity profiles keyed by label.
pub fn builtin_profiles() -> Vec<ActivityProfile> {
    let table: Vec<(&str, Vec<(usize, f64, f64)>)> = vec![
        ("Run", vec![(0, 65.0, 2.0), (3, -20.0, 0.5), (4, -20.0, 0.5), (6, -380.0, 1.0), (7, -380.0, 1.0), (8, -380.0, 1.0), (10, 160.0, 3.0), (11, 0.3, 1.0), (12, 3.0, 1.0), (16, -2.0, 0.5), (19, 7.0, 1.0), (20, 2.0, 2.0), (23, -1.5, 1.0)]),
        ("Walk", vec![(0, 22.0, 1.5), (6, -150.0, 1.0), (7, -150.0, 1.0), (8, -150.0, 1.0), (10, 95.0, 2.0), (12, 1.4, 1.0), (15, -0.8, 1.0), (16, -1.0, 1.0), (19, 4.0, 1.0)]),
        ("Outdoor Bike", vec![(0, 42.0, 2.0), (3, -12.0, 1.0), (6, -280.0, 1.0), (7, -280.0, 1.0), (8, -280.0, 1.0), (10, 3.0, 0.5), (12, 1.8, 1.5), (17, 0.6, 2.0), (20, 1.2, 1.5), (23, -2.5, 1.0), (25, 0.3, 3.0)]),
        ("Sleep", vec![(0, -12.0, 0.5), (3, 18.0, 1.0), (6, 150.0, 0.5), (7, 150.0, 0.5), (8, 150.0, 0.5), (10, -4.0, 0.0), (12, -2.5, 0.3), (19, -7.0, 0.3), (23, 1.2, 0.5)]),
        ("Swim", vec![(0, 38.0, 2.0), (5, -50.0, 3.0), (10, -4.0, 0.0), (12, 2.2, 2.0), (18, 2.0, 2.0), (22, -25.0, 1.0), (23, -4.0, 2.0), (20, -1.5, 0.5)]),
        ("Elliptical", vec![(0, 48.0, 1.5), (6, -300.0, 1.0), (7, -300.0, 1.0), (8, -300.0, 1.0), (10, 120.0, 1.0), (12, 2.0, 0.5), (15, -1.2, 0.3), (17, -0.4, 1.0)]),
        ("Strength training", vec![(0, 30.0, 4.0), (3, -8.0, 2.0), (10, 8.0, 3.0), (12, 1.0, 3.0), (13, 12.0, 3.0), (18, 4.0, 3.0), (20, 1.5, 2.0)]),
        ("Hike", vec![(0, 35.0, 2.0), (6, -220.0, 1.0), (7, -220.0, 1.0), (8, -220.0, 1.0), (10, 70.0, 2.0), (12, 1.6, 1.0), (19, 5.0, 1.0), (25, 0.6, 3.0), (23, -2.0, 1.0)]),
        ("Yoga", vec![(0, 8.0, 1.0), (3, 10.0, 1.0), (10, -3.0, 0.2), (12, -0.5, 0.5), (17, -0.5, 2.0), (21, 0.05, 2.0)]),
    ];
    table
        .into_iter()
        .map(|(label, list)| ActivityProfile { label: label.to_string(), effects: effects(&list) })
        .collect()
}

pub fn activity_profile(label: &str) -> Option<ActivityProfile> {
    builtin_profiles().into_iter().find(|p| p.label == label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Probability of one off-wrist gap where every channel is invalid.
    pub gap_probability: f64,
    pub max_gap_minutes: usize,
    /// Independent per-minute dropout of the RR-derived channels.
    pub hrv_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { gap_probability: 0.5, max_gap_minutes: 180, hrv_dropout: 0.05 }
    }
}

/// Generates one day. A pure function of `(seed, schedule)`.
pub fn synthesize_day(seed: u64, schedule: &[Segment]) -> Result<(SensorDay, EventLog)> {
    synthesize_day_with(&SynthConfig::default(), seed, schedule)
}

pub fn synthesize_day_with(cfg: &SynthConfig, seed: u64, schedule: &[Segment]) -> Result<(SensorDay, EventLog)> {
    for seg in schedule {
        if seg.start > seg.end || seg.end >= MINUTES_PER_DAY {
            return Err(Error::invalid(format!(
                "segment {:?} [{}, {}] must lie within [0, {MINUTES_PER_DAY})",
                seg.profile.label, seg.start, seg.end
            )));
        }
        seg.profile.validate()?;
    }

    let mut rng = rng_for(seed, &[0x5e45]);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phase_shift: f64 = rng.random_range(-60.0..60.0);
    let mut day = SensorDay::filled(seed, seed, 0.0);

    for (c, &(mean, amp, noise, lo, hi)) in BASELINES.iter().enumerate() {
        let mut offset = vec![0.0f64; MINUTES_PER_DAY];
        let mut scale = vec![1.0f64; MINUTES_PER_DAY];
        for seg in schedule {
            for e in seg.profile.effects.iter().filter(|e| e.channel == c) {
                for t in seg.start..=seg.end {
                    offset[t] += e.offset;
                    scale[t] *= e.amplitude;
                }
            }
        }
        for t in 0..MINUTES_PER_DAY {
            let phase = 2.0 * std::f64::consts::PI * (t as f64 - 480.0 - phase_shift) / MINUTES_PER_DAY as f64;
            let z: f64 = std_normal.sample(&mut rng);
            let x = (mean + amp * phase.sin() + offset[t] + noise * scale[t] * z).clamp(lo, hi);
            day.set(c, t, x as f32, true);
        }
    }

    if rng.random_bool(cfg.gap_probability.clamp(0.0, 1.0)) && cfg.max_gap_minutes > 0 {
        let len = rng.random_range(1..=cfg.max_gap_minutes.min(MINUTES_PER_DAY));
        let start = rng.random_range(0..=MINUTES_PER_DAY - len);
        for c in 0..N_CHANNELS {
            for t in start..start + len {
                day.set(c, t, 0.0, false);
            }
        }
    }
    let dropout = cfg.hrv_dropout.clamp(0.0, 1.0);
    for c in 1..=8 {
        for t in 0..MINUTES_PER_DAY {
            if rng.random_bool(dropout) {
                day.set(c, t, 0.0, false);
            }
        }
    }

    let log = EventLog {
        activities: schedule
            .iter()
            .map(|s| ActivityEvent { label: s.profile.label.clone(), start: s.start, end: s.end })
            .collect(),
        moods: Vec::new(),
    };
    Ok((day, log))
}

/// Recipe for a class-balanced synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub classes: Vec<String>,
    pub days_per_class: usize,
    pub days_per_person: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_segment_minutes: usize,
    pub max_segment_minutes: usize,
    /// Adds a night-time Sleep segment to every day.
    pub include_sleep: bool,
    pub mood_probability: f64,
    pub synth: SynthConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: vec!["Run".into(), "Walk".into(), "Outdoor Bike".into(), "Swim".into()],
            days_per_class: 50,
            days_per_person: 5,
            min_segments: 3,
            max_segments: 6,
            min_segment_minutes: 60,
            max_segment_minutes: 120,
            include_sleep: false,
            mood_probability: 0.3,
            synth: SynthConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("dataset needs at least one class"));
        }
        for c in &self.classes {
            if activity_profile(c).is_none() {
                return Err(Error::config(format!("unknown activity class {c:?}")));
            }
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments || self.max_segments > 6 {
            return Err(Error::config("segments per day must satisfy 1 <= min <= max <= 6"));
        }
        if self.min_segment_minutes == 0 || self.min_segment_minutes > self.max_segment_minutes || self.max_segment_minutes > 120 {
            return Err(Error::config("segment minutes must satisfy 1 <= min <= max <= 120"));
        }
        if self.days_per_person == 0 {
            return Err(Error::config("days_per_person must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDay {
    pub day: SensorDay,
    pub log: EventLog,
    pub class: String,
}

const DAYTIME: (usize, usize) = (420, 1320);

fn daytime_schedule<R: Rng>(rng: &mut R, spec: &DatasetSpec, profile: &ActivityProfile) -> Vec<Segment> {
    let n = rng.random_range(spec.min_segments..=spec.max_segments);
    let mut segments: Vec<Segment> = Vec::with_capacity(n);
    let mut attempts = 0;
    while segments.len() < n && attempts < 200 {
        attempts += 1;
        let len = rng.random_range(spec.min_segment_minutes..=spec.max_segment_minutes);
        let start = rng.random_range(DAYTIME.0..DAYTIME.1 - len);
        let end = start + len - 1;
        // keep a 10-minute gap between segments
        if segments.iter().all(|s| end + 10 < s.start || start > s.end + 10) {
            segments.push(Segment { profile: profile.clone(), start, end });
        }
    }
    segments.sort_by_key(|s| s.start);
    segments
}

/// Builds `days_per_class` days for each class, in class-major order.
///
/// Day ids are global indices; days failing the validity criterion are
/// regenerated from the next attempt seed.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<LabeledDay>> {
    spec.validate()?;
    let sleep = activity_profile("Sleep").expect("builtin Sleep profile");
    let mut out = Vec::with_capacity(spec.classes.len() * spec.days_per_class);
    for class in &spec.classes {
        let profile = activity_profile(class).expect("validated class");
        for k in 0..spec.days_per_class {
            let index = out.len() as u64;
            let mut attempt = 0u64;
            let (mut day, log) = loop {
                let day_seed = derive_seed(seed, &[hash_str(class), k as u64, attempt]);
                let mut rng = rng_for(day_seed, &[0x5c4e]);
                let mut schedule = daytime_schedule(&mut rng, spec, &profile);
                if spec.include_sleep {
                    let start = rng.random_range(0..60);
                    let end = rng.random_range(330..420);
                    schedule.insert(0, Segment { profile: sleep.clone(), start, end });
                }
                let (day, mut log) = synthesize_day_with(&spec.synth, day_seed, &schedule)?;
                if validity_fraction(&day) < MIN_VALID_FRACTION {
                    attempt += 1;
                    continue;
                }
                if rng.random_bool(spec.mood_probability.clamp(0.0, 1.0)) {
                    let label = MOOD_LABELS[rng.random_range(0..MOOD_LABELS.len())];
                    let minute = rng.random_range(DAYTIME.0..DAYTIME.1);
                    log.moods.push(MoodEvent { label: label.to_string(), minute });
                }
                break (day, log);
            };
            day.day_id = index;
            day.person_id = index / spec.days_per_person as u64;
            log.validate()?;
            out.push(LabeledDay { day, log, class: class.clone() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::STEP_COUNT;

    fn run(start: usize, end: usize) -> Segment {
        Segment { profile: activity_profile("Run").unwrap(), start, end }
    }

    fn valid_mean(day: &SensorDay, c: usize, range: std::ops::Range<usize>) -> f64 {
        let xs: Vec<f64> = range.filter(|&t| day.is_valid(c, t)).map(|t| f64::from(day.get(c, t))).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn empty_schedule_gives_empty_log() {
        let (_, log) = synthesize_day(7, &[]).unwrap();
        assert!(log.activities.is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let sched = [run(100, 200)];
        let a = synthesize_day(5, &sched).unwrap();
        let b = synthesize_day(5, &sched).unwrap();
        assert_eq!(a, b);
        let bits = |d: &SensorDay| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.0), bits(&b.0));
        assert_ne!(bits(&a.0), bits(&synthesize_day(6, &sched).unwrap().0));
    }

    #[test]
    fn run_segment_raises_steps() {
        let (day, log) = synthesize_day(1, &[run(600, 630)]).unwrap();
        assert!(valid_mean(&day, STEP_COUNT, 600..631) > valid_mean(&day, STEP_COUNT, 0..600));
        assert_eq!(log.activities, vec![ActivityEvent { label: "Run".into(), start: 600, end: 630 }]);
    }

    #[test]
    fn out_of_range_segment_rejected() {
        assert!(synthesize_day(1, &[run(1400, 1440)]).is_err());
        assert!(synthesize_day(1, &[run(50, 40)]).is_err());
        let bad = Segment {
            profile: ActivityProfile { label: "X".into(), effects: vec![ChannelEffect { channel: 26, offset: 1.0, amplitude: 1.0 }] },
            start: 0,
            end: 1,
        };
        assert!(synthesize_day(1, &[bad]).is_err());
    }

    #[test]
    fn emitted_days_are_finite_where_valid() {
        let (day, _) = synthesize_day(42, &[run(10, 20)]).unwrap();
        assert!(day.values().iter().zip(day.mask()).all(|(v, &ok)| !ok || v.is_finite()));
        assert_eq!(day.values().len(), N_CHANNELS * MINUTES_PER_DAY);
    }

    #[test]
    fn dataset_counts_and_labels() {
        let spec = DatasetSpec { days_per_class: 3, ..DatasetSpec::default() };
        let days = build_dataset(&spec, 9).unwrap();
        assert_eq!(days.len(), 12);
        for (i, d) in days.iter().enumerate() {
            assert_eq!(d.day.day_id, i as u64);
            assert!(validity_fraction(&d.day) >= MIN_VALID_FRACTION);
            assert_eq!(d.log.primary_label(&spec.classes), Some(d.class.as_str()));
        }
        assert_eq!(days, build_dataset(&spec, 9).unwrap());
        let bad = DatasetSpec { classes: vec!["Teleport".into()], ..DatasetSpec::default() };
        assert!(build_dataset(&bad, 1).is_err());
    }
}
