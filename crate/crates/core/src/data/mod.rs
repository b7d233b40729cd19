//! Sensor-day data model, synthetic generation, normalization, and dataset files.

mod io;
mod registry;
mod synth;

pub use io::{
    decode_event_log, decode_sensor_file, encode_event_log, encode_sensor_file, read_dataset,
    write_dataset, EVENTS_FILE, SENSOR_FILE, SENSOR_MAGIC, SENSOR_VERSION,
};
pub use registry::{
    channel_index, feature_registry, FeatureSpec, SensorGroup, HEART_RATE, MINUTES_PER_DAY,
    N_CHANNELS, STEP_COUNT,
};
pub use synth::{
    activity_profile, build_dataset, builtin_profiles, synthesize_day, synthesize_day_with,
    ActivityProfile, ChannelEffect, DatasetSpec, LabeledDay, Segment, SynthConfig,
    MIN_VALID_FRACTION, MOOD_LABELS,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const CELLS: usize = N_CHANNELS * MINUTES_PER_DAY;

/// One person-day: 26 channels by 1440 minutes, row-major by channel, with a
/// validity mask of the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDay {
    pub person_id: u64,
    pub day_id: u64,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl SensorDay {
    pub fn new(person_id: u64, day_id: u64, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != CELLS || valid.len() != CELLS {
            return Err(Error::Shape(format!(
                "sensor day needs {CELLS} cells, got {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..CELLS).find(|&i| valid[i] && !values[i].is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at channel {} minute {}",
                i / MINUTES_PER_DAY,
                i % MINUTES_PER_DAY
            )));
        }
        Ok(SensorDay { person_id, day_id, values, valid })
    }

    /// A day where every cell is valid and equal to `fill`.
    pub fn filled(person_id: u64, day_id: u64, fill: f32) -> Self {
        SensorDay { person_id, day_id, values: vec![fill; CELLS], valid: vec![true; CELLS] }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.values[c * MINUTES_PER_DAY..(c + 1) * MINUTES_PER_DAY]
    }

    pub fn channel_mask(&self, c: usize) -> &[bool] {
        &self.valid[c * MINUTES_PER_DAY..(c + 1) * MINUTES_PER_DAY]
    }

    pub fn get(&self, c: usize, t: usize) -> f32 {
        self.values[c * MINUTES_PER_DAY + t]
    }

    pub fn is_valid(&self, c: usize, t: usize) -> bool {
        self.valid[c * MINUTES_PER_DAY + t]
    }

    /// Sets a cell. Non-finite values are stored as invalid zeros.
    pub fn set(&mut self, c: usize, t: usize, value: f32, valid: bool) {
        let i = c * MINUTES_PER_DAY + t;
        if valid && value.is_finite() {
            self.values[i] = value;
            self.valid[i] = true;
        } else {
            self.values[i] = if value.is_finite() { value } else { 0.0 };
            self.valid[i] = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoodEvent {
    pub label: String,
    pub minute: usize,
}

/// Ground-truth activity segments (inclusive minute ranges) and mood entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub activities: Vec<ActivityEvent>,
    pub moods: Vec<MoodEvent>,
}

impl EventLog {
    pub fn validate(&self) -> Result<()> {
        for a in &self.activities {
            if a.start > a.end || a.end >= MINUTES_PER_DAY {
                return Err(Error::invalid(format!(
                    "activity {:?} spans [{}, {}] outside the day or reversed",
                    a.label, a.start, a.end
                )));
            }
        }
        if let Some(m) = self.moods.iter().find(|m| m.minute >= MINUTES_PER_DAY) {
            return Err(Error::invalid(format!("mood {:?} at minute {} outside the day", m.label, m.minute)));
        }
        Ok(())
    }

    /// First activity whose label is one of `classes`.
    pub fn primary_label<'a>(&self, classes: &'a [String]) -> Option<&'a str> {
        self.activities
            .iter()
            .find_map(|a| classes.iter().find(|c| **c == a.label).map(String::as_str))
    }
}

pub fn validity_fraction(day: &SensorDay) -> f64 {
    day.valid.iter().filter(|&&v| v).count() as f64 / CELLS as f64
}

/// Per-channel normalization statistics in channel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

/// Population mean and std per channel over valid entries of all days.
///
/// Channels with no valid entry at all get mean 0 and the std floor.
pub fn compute_norm_stats(days: &[SensorDay]) -> Result<NormStats> {
    if days.is_empty() {
        return Err(Error::invalid("cannot compute normalization statistics of an empty day list"));
    }
    let mut mean = vec![0.0; N_CHANNELS];
    let mut std = vec![STD_FLOOR; N_CHANNELS];
    for c in 0..N_CHANNELS {
        // Welford accumulation.
        let (mut n, mut mu, mut m2) = (0u64, 0.0f64, 0.0f64);
        for day in days {
            for (&x, &ok) in day.channel(c).iter().zip(day.channel_mask(c)) {
                if ok {
                    n += 1;
                    let x = f64::from(x);
                    let delta = x - mu;
                    mu += delta / n as f64;
                    m2 += delta * (x - mu);
                }
            }
        }
        if n > 0 {
            mean[c] = mu;
            std[c] = (m2 / n as f64).sqrt().max(STD_FLOOR);
        }
    }
    Ok(NormStats { mean, std })
}

/// Z-scores valid entries; invalid entries become exactly zero.
pub fn normalize(day: &SensorDay, stats: &NormStats) -> SensorDay {
    let mut values = vec![0.0f32; CELLS];
    for c in 0..N_CHANNELS {
        let (mu, sd) = (stats.mean[c], stats.std[c]);
        let base = c * MINUTES_PER_DAY;
        for t in 0..MINUTES_PER_DAY {
            if day.valid[base + t] {
                values[base + t] = ((f64::from(day.values[base + t]) - mu) / sd) as f32;
            }
        }
    }
    SensorDay { person_id: day.person_id, day_id: day.day_id, values, valid: day.valid.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn two_pass(days: &[SensorDay]) -> NormStats {
        let mut mean = vec![0.0; N_CHANNELS];
        let mut std = vec![STD_FLOOR; N_CHANNELS];
        for c in 0..N_CHANNELS {
            let xs: Vec<f64> = days
                .iter()
                .flat_map(|d| (0..MINUTES_PER_DAY).filter(move |&t| d.is_valid(c, t)).map(move |t| f64::from(d.get(c, t))))
                .collect();
            if xs.is_empty() {
                continue;
            }
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            mean[c] = m;
            std[c] = v.sqrt().max(STD_FLOOR);
        }
        NormStats { mean, std }
    }

    fn invalid_day() -> SensorDay {
        SensorDay { person_id: 0, day_id: 0, values: vec![0.0; CELLS], valid: vec![false; CELLS] }
    }

    #[test]
    fn validity_fraction_cases() {
        assert_eq!(validity_fraction(&SensorDay::filled(0, 0, 1.0)), 1.0);
        assert_eq!(validity_fraction(&invalid_day()), 0.0);
        let mut d = SensorDay::filled(0, 0, 1.0);
        for c in 0..N_CHANNELS {
            for t in 0..MINUTES_PER_DAY / 2 {
                d.set(c, t, 0.0, false);
            }
        }
        assert_eq!(validity_fraction(&d), 0.5);
    }

    #[test]
    fn norm_stats_small_cases() {
        let s = compute_norm_stats(&[SensorDay::filled(0, 0, 70.0)]).unwrap();
        assert_eq!(s.mean[0], 70.0);
        assert_eq!(s.std[0], STD_FLOOR);

        let mut d = invalid_day();
        d.set(3, 10, 0.0, true);
        d.set(3, 11, 2.0, true);
        let s = compute_norm_stats(&[d]).unwrap();
        assert_eq!(s.mean[3], 1.0);
        assert_eq!(s.std[3], 1.0);
        assert!(compute_norm_stats(&[]).is_err());
    }

    #[test]
    fn norm_stats_match_two_pass_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let days: Vec<SensorDay> = (0..3)
            .map(|k| {
                let mut d = invalid_day();
                d.day_id = k;
                for c in 0..N_CHANNELS {
                    for t in 0..MINUTES_PER_DAY {
                        let v: f32 = rng.random_range(-50.0..150.0);
                        d.set(c, t, v, rng.random_bool(0.8));
                    }
                }
                d
            })
            .collect();
        let got = compute_norm_stats(&days).unwrap();
        let want = two_pass(&days);
        for c in 0..N_CHANNELS {
            assert!((got.mean[c] - want.mean[c]).abs() < 1e-9);
            assert!((got.std[c] - want.std[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_zero_imputes_and_centers() {
        let mut d = SensorDay::filled(0, 0, 5.0);
        d.set(0, 0, 1e30, false);
        d.set(1, 0, 9.0, true);
        let stats = compute_norm_stats(&[d.clone()]).unwrap();
        let n = normalize(&d, &stats);
        assert_eq!(n.get(0, 0), 0.0);
        assert!(!n.is_valid(0, 0));
        assert_eq!(n.get(0, 1), 0.0);
        assert_eq!(n.mask(), d.mask());
    }

    #[test]
    fn normalized_synthetic_day_has_unit_stats() {
        let (day, _) = synthesize_day(3, &[]).unwrap();
        let stats = compute_norm_stats(&[day.clone()]).unwrap();
        let post = two_pass(&[normalize(&day, &stats)]);
        for c in 0..N_CHANNELS {
            assert!(post.mean[c].abs() < 1e-5, "channel {c} mean {}", post.mean[c]);
            assert!((post.std[c] - 1.0).abs() < 1e-5, "channel {c} std {}", post.std[c]);
        }
    }

    #[test]
    fn event_log_bounds() {
        let mut log = EventLog::default();
        log.activities.push(ActivityEvent { label: "Run".into(), start: 5, end: 4 });
        assert!(log.validate().is_err());
        log.activities[0] = ActivityEvent { label: "Run".into(), start: 5, end: 1440 };
        assert!(log.validate().is_err());
        log.activities[0].end = 1439;
        assert!(log.validate().is_ok());
    }
}
