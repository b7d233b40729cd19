//! Dataset files: a binary sensor tensor file plus a JSONL event log.
//!
//! Sensor file layout (little-endian):
//! `"SLMD"`, version `u16`, channels `u16`, minutes `u16`, count `u32`, then per
//! day: person id `u64`, day id `u64`, channels*minutes `f32` values row-major,
//! and the validity mask packed LSB-first, row-major, padded to a whole byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivityEvent, EventLog, MoodEvent, SensorDay, CELLS, MINUTES_PER_DAY, N_CHANNELS};
use crate::{Error, Result};

pub const SENSOR_MAGIC: &[u8; 4] = b"SLMD";
pub const SENSOR_VERSION: u16 = 1;
pub const SENSOR_FILE: &str = "days.slmd";
pub const EVENTS_FILE: &str = "events.jsonl";

const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4;
const MASK_BYTES: usize = CELLS.div_ceil(8);
const RECORD_LEN: usize = 16 + CELLS * 4 + MASK_BYTES;

pub fn encode_sensor_file(days: &[SensorDay]) -> Result<Vec<u8>> {
    let count = u32::try_from(days.len()).map_err(|_| Error::invalid("too many days for one file"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + days.len() * RECORD_LEN);
    out.extend_from_slice(SENSOR_MAGIC);
    out.extend_from_slice(&SENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(N_CHANNELS as u16).to_le_bytes());
    out.extend_from_slice(&(MINUTES_PER_DAY as u16).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for day in days {
        out.extend_from_slice(&day.person_id.to_le_bytes());
        out.extend_from_slice(&day.day_id.to_le_bytes());
        for v in &day.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut mask = vec![0u8; MASK_BYTES];
        for (i, _) in day.valid.iter().enumerate().filter(|(_, &ok)| ok) {
            mask[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&mask);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(format!("truncated sensor file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_sensor_file(bytes: &[u8]) -> Result<Vec<SensorDay>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != SENSOR_MAGIC {
        return Err(Error::format("bad magic, expected SLMD"));
    }
    let version = cur.u16()?;
    if version != SENSOR_VERSION {
        return Err(Error::format(format!("unsupported sensor file version {version}")));
    }
    let (channels, minutes) = (cur.u16()? as usize, cur.u16()? as usize);
    if (channels, minutes) != (N_CHANNELS, MINUTES_PER_DAY) {
        return Err(Error::format(format!(
            "sensor file dims ({channels}, {minutes}) differ from ({N_CHANNELS}, {MINUTES_PER_DAY})"
        )));
    }
    let count = cur.u32()? as usize;
    let remaining = bytes.len() - cur.pos;
    if remaining != count.saturating_mul(RECORD_LEN) {
        return Err(Error::format(format!(
            "sensor file declares {count} days but carries {remaining} payload bytes"
        )));
    }
    let mut days = Vec::with_capacity(count);
    for _ in 0..count {
        let person_id = cur.u64()?;
        let day_id = cur.u64()?;
        let values: Vec<f32> = cur
            .take(CELLS * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mask = cur.take(MASK_BYTES)?;
        let valid: Vec<bool> = (0..CELLS).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        if mask[MASK_BYTES - 1] >> (CELLS % 8) != 0 && CELLS % 8 != 0 {
            return Err(Error::format("nonzero padding bits in validity mask"));
        }
        days.push(SensorDay::new(person_id, day_id, values, valid).map_err(|e| Error::format(e.to_string()))?);
    }
    Ok(days)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    person_id: u64,
    day_id: u64,
    activities: Vec<ActivityEvent>,
    moods: Vec<MoodEvent>,
}

/// One JSON object per line, aligned with `days`.
pub fn encode_event_log(days: &[SensorDay], logs: &[EventLog]) -> Result<String> {
    if days.len() != logs.len() {
        return Err(Error::invalid(format!("{} days but {} event logs", days.len(), logs.len())));
    }
    let mut out = String::new();
    for (day, log) in days.iter().zip(logs) {
        let rec = EventRecord {
            person_id: day.person_id,
            day_id: day.day_id,
            activities: log.activities.clone(),
            moods: log.moods.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Returns `(person_id, day_id, log)` per non-empty line.
pub fn decode_event_log(text: &str) -> Result<Vec<(u64, u64, EventLog)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("event log line {}: {e}", lineno + 1)))?;
        let log = EventLog { activities: rec.activities, moods: rec.moods };
        log.validate().map_err(|e| Error::format(format!("event log line {}: {e}", lineno + 1)))?;
        out.push((rec.person_id, rec.day_id, log));
    }
    Ok(out)
}

/// Writes `days.slmd` and `events.jsonl` into `dir`.
pub fn write_dataset(dir: &Path, days: &[SensorDay], logs: &[EventLog]) -> Result<()> {
    let events = encode_event_log(days, logs)?;
    let sensors = encode_sensor_file(days)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SENSOR_FILE), sensors)?;
    fs::write(dir.join(EVENTS_FILE), events)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Vec<SensorDay>, Vec<EventLog>)> {
    let days = decode_sensor_file(&fs::read(dir.join(SENSOR_FILE))?)?;
    let events = decode_event_log(&fs::read_to_string(dir.join(EVENTS_FILE))?)?;
    if events.len() != days.len() {
        return Err(Error::format(format!("{} days but {} event records", days.len(), events.len())));
    }
    let mut logs = Vec::with_capacity(days.len());
    for (day, (person_id, day_id, log)) in days.iter().zip(events) {
        if (day.person_id, day.day_id) != (person_id, day_id) {
            return Err(Error::format(format!(
                "event record ({person_id}, {day_id}) does not match day ({}, {})",
                day.person_id, day.day_id
            )));
        }
        logs.push(log);
    }
    Ok((days, logs))
}
