//! Rewrite-template pools for the three caption levels.
//!
//! The pool ships as a plain-text asset: an `@version N` line, then
//! `[statistical]`, `[structural]`, and `[semantic]` sections with one
//! template per line. `#` starts a comment line.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::{Error, Result};

pub const STATISTICAL_POOL_SIZE: usize = 20;
pub const STRUCTURAL_POOL_SIZE: usize = 15;
pub const SEMANTIC_POOL_SIZE: usize = 20;

pub const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.txt");
const SUPPORTED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Name,
    NameCap,
    Mean,
    Std,
    Min,
    Max,
    Trend,
    Event,
    EventCap,
    Start,
    End,
    Minute,
    Label,
    Mood,
}

impl Slot {
    fn parse(s: &str) -> Option<Slot> {
        Some(match s {
            "name" => Slot::Name,
            "Name" => Slot::NameCap,
            "mean" => Slot::Mean,
            "std" => Slot::Std,
            "min" => Slot::Min,
            "max" => Slot::Max,
            "trend" => Slot::Trend,
            "event" => Slot::Event,
            "Event" => Slot::EventCap,
            "start" => Slot::Start,
            "end" => Slot::End,
            "minute" => Slot::Minute,
            "label" => Slot::Label,
            "mood" => Slot::Mood,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(line: &str) -> Result<Template> {
        let mut pieces = Vec::new();
        let mut rest = line;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| Error::format(format!("unclosed placeholder in template {line:?}")))?;
            let name = &rest[open + 1..close];
            let slot = Slot::parse(name)
                .ok_or_else(|| Error::format(format!("unknown placeholder {{{name}}} in template {line:?}")))?;
            pieces.push(Piece::Slot(slot));
            rest = &rest[close + 1..];
        }
        if rest.contains('}') {
            return Err(Error::format(format!("stray '}}' in template {line:?}")));
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Template { source: line.to_string(), pieces })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> BTreeSet<Slot> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(*s),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Fills every slot through `value`. A slot the caller cannot bind is an
    /// error, never left in the output.
    pub fn render(&self, value: impl Fn(Slot) -> Option<String>) -> Result<String> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => {
                    let v = value(*s).ok_or_else(|| Error::invalid(format!("no value for {s:?} in {:?}", self.source)))?;
                    let _ = write!(out, "{v}");
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Statistic,
    Trend,
    Point,
    Activity,
    Mood,
}

fn classify(section: &str, t: &Template) -> Result<TemplateKind> {
    use Slot::*;
    let slots = t.slots();
    let has = |s: Slot| slots.contains(&s);
    let only = |allowed: &[Slot]| slots.iter().all(|s| allowed.contains(s));
    let named = has(Name) || has(NameCap);
    let kind = match section {
        "statistical" if named && [Mean, Std, Min, Max].iter().all(|&s| has(s)) && only(&[Name, NameCap, Mean, Std, Min, Max]) => {
            Some(TemplateKind::Statistic)
        }
        "structural" if named && has(Trend) && has(Start) && has(End) && only(&[Name, NameCap, Trend, Start, End]) => {
            Some(TemplateKind::Trend)
        }
        "structural" if named && (has(Event) || has(EventCap)) && has(Minute) && only(&[Name, NameCap, Event, EventCap, Minute]) => {
            Some(TemplateKind::Point)
        }
        "semantic" if has(Label) && has(Start) && has(End) && only(&[Label, Start, End]) => Some(TemplateKind::Activity),
        "semantic" if has(Mood) && has(Minute) && only(&[Mood, Minute]) => Some(TemplateKind::Mood),
        _ => None,
    };
    kind.ok_or_else(|| Error::format(format!("template {:?} has an invalid placeholder set for [{section}]", t.source)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    pub version: u32,
    pub statistical: Vec<Template>,
    pub structural: Vec<Template>,
    pub semantic: Vec<Template>,
    trend: Vec<usize>,
    point: Vec<usize>,
    activity: Vec<usize>,
    mood: Vec<usize>,
}

impl Default for TemplatePool {
    fn default() -> Self {
        TemplatePool::parse(DEFAULT_TEMPLATES).expect("bundled template pool is valid")
    }
}

impl TemplatePool {
    pub fn parse(text: &str) -> Result<TemplatePool> {
        let mut version = None;
        let mut section: Option<String> = None;
        let (mut statistical, mut structural, mut semantic) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let at = |e: Error| Error::format(format!("templates line {}: {e}", lineno + 1));
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("@version") {
                if version.is_some() || section.is_some() {
                    return Err(at(Error::format("version line must come first and only once")));
                }
                let v: u32 = v.trim().parse().map_err(|_| at(Error::format("bad version number")))?;
                if v != SUPPORTED_VERSION {
                    return Err(at(Error::format(format!("unsupported template version {v}"))));
                }
                version = Some(v);
                continue;
            }
            if version.is_none() {
                return Err(at(Error::format("missing @version line")));
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if !matches!(name, "statistical" | "structural" | "semantic") {
                    return Err(at(Error::format(format!("unknown section [{name}]"))));
                }
                section = Some(name.to_string());
                continue;
            }
            let sec = section.as_deref().ok_or_else(|| at(Error::format("template outside a section")))?;
            let t = Template::parse(line).map_err(at)?;
            let kind = classify(sec, &t).map_err(at)?;
            match kind {
                TemplateKind::Statistic => statistical.push(t),
                TemplateKind::Trend | TemplateKind::Point => structural.push((t, kind)),
                TemplateKind::Activity | TemplateKind::Mood => semantic.push((t, kind)),
            }
        }
        let version = version.ok_or_else(|| Error::format("missing @version line"))?;
        for (name, got, want) in [
            ("statistical", statistical.len(), STATISTICAL_POOL_SIZE),
            ("structural", structural.len(), STRUCTURAL_POOL_SIZE),
            ("semantic", semantic.len(), SEMANTIC_POOL_SIZE),
        ] {
            if got != want {
                return Err(Error::format(format!("[{name}] has {got} templates, expected {want}")));
            }
        }
        let idx = |v: &[(Template, TemplateKind)], k| v.iter().enumerate().filter(|(_, (_, kk))| *kk == k).map(|(i, _)| i).collect::<Vec<_>>();
        let pool = TemplatePool {
            version,
            trend: idx(&structural, TemplateKind::Trend),
            point: idx(&structural, TemplateKind::Point),
            activity: idx(&semantic, TemplateKind::Activity),
            mood: idx(&semantic, TemplateKind::Mood),
            statistical,
            structural: structural.into_iter().map(|(t, _)| t).collect(),
            semantic: semantic.into_iter().map(|(t, _)| t).collect(),
        };
        for (name, v) in [("trend", &pool.trend), ("point-event", &pool.point), ("activity", &pool.activity), ("mood", &pool.mood)] {
            if v.is_empty() {
                return Err(Error::format(format!("no {name} templates in pool")));
            }
        }
        Ok(pool)
    }

    pub fn of_kind(&self, kind: TemplateKind) -> Vec<&Template> {
        match kind {
            TemplateKind::Statistic => self.statistical.iter().collect(),
            TemplateKind::Trend => self.trend.iter().map(|&i| &self.structural[i]).collect(),
            TemplateKind::Point => self.point.iter().map(|&i| &self.structural[i]).collect(),
            TemplateKind::Activity => self.activity.iter().map(|&i| &self.semantic[i]).collect(),
            TemplateKind::Mood => self.mood.iter().map(|&i| &self.semantic[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_pool_sizes() {
        let pool = TemplatePool::default();
        assert_eq!(pool.version, 1);
        assert_eq!(pool.statistical.len(), 20);
        assert_eq!(pool.structural.len(), 15);
        assert_eq!(pool.semantic.len(), 20);
        assert_eq!(pool.of_kind(TemplateKind::Trend).len() + pool.of_kind(TemplateKind::Point).len(), 15);
    }

    #[test]
    fn rejects_bad_pools() {
        assert!(TemplatePool::parse("").is_err());
        assert!(TemplatePool::parse("[statistical]\n").is_err());
        let bad_slot = DEFAULT_TEMPLATES.replacen("value is {mean}", "value is {average}", 1);
        assert!(TemplatePool::parse(&bad_slot).is_err());
        let short: String = DEFAULT_TEMPLATES.lines().filter(|l| !l.starts_with("Summary of")).collect::<Vec<_>>().join("\n");
        assert!(TemplatePool::parse(&short).unwrap_err().to_string().contains("19"));
        assert!(TemplatePool::parse(&DEFAULT_TEMPLATES.replacen("@version 1", "@version 2", 1)).is_err());
    }

    #[test]
    fn render_fails_on_unbound_slot() {
        let t = Template::parse("At {minute}, {mood}.").unwrap();
        assert_eq!(t.render(|s| Some(format!("{s:?}"))).unwrap(), "At Minute, Mood.");
        assert!(t.render(|s| (s == Slot::Minute).then(|| "3".to_string())).is_err());
        assert!(Template::parse("x {oops").is_err());
        assert!(Template::parse("x oops}").is_err());
    }
}
