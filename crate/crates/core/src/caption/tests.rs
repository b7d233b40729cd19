use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{synthesize_day, activity_profile, ActivityEvent, MoodEvent, Segment};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Slope from raw sums via the 2x2 normal equations.
fn oracle_slope(xs: &[f32], ok: &[bool]) -> Option<f64> {
    let (mut n, mut st, mut sx, mut stt, mut stx) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, (&x, &v)) in xs.iter().zip(ok).enumerate() {
        if v {
            let (t, x) = (t as f64, f64::from(x));
            n += 1.0;
            st += t;
            sx += x;
            stt += t * t;
            stx += t * x;
        }
    }
    if n < 2.0 {
        return None;
    }
    Some((n * stx - st * sx) / (n * stt - st * st))
}

fn oracle_std(xs: &[f32], ok: &[bool]) -> f64 {
    let v: Vec<f64> = xs.iter().zip(ok).filter(|(_, &o)| o).map(|(&x, _)| f64::from(x)).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Per-window kinds, `None` where the window is skipped.
fn oracle_window_kinds(xs: &[f32], ok: &[bool], p: &TrendParams) -> Vec<(usize, usize, Option<TrendKind>)> {
    let scale = oracle_std(xs, ok).max(1e-6);
    let n = xs.len();
    let starts: Vec<usize> = if n < p.window_len {
        if n >= 2 { vec![0] } else { vec![] }
    } else {
        let mut v = vec![];
        let mut s = 0;
        while s + p.window_len <= n {
            v.push(s);
            s += p.stride;
        }
        v
    };
    starts
        .into_iter()
        .map(|s| {
            let e = (s + p.window_len).min(n);
            let kind = oracle_slope(&xs[s..e], &ok[s..e]).map(|b| {
                let b = b / scale;
                if b > p.slope_threshold {
                    TrendKind::Increasing
                } else if b < -p.slope_threshold {
                    TrendKind::Decreasing
                } else {
                    TrendKind::Stable
                }
            });
            (s, e - 1, kind)
        })
        .collect()
}

fn random_piecewise(r: &mut ChaCha8Rng, n: usize) -> (Vec<f32>, Vec<bool>) {
    let mut xs = Vec::with_capacity(n);
    let mut level = r.random_range(-5.0..5.0f64);
    let mut slope = 0.0;
    for _ in 0..n {
        if r.random_bool(0.01) {
            slope = r.random_range(-0.5..0.5);
        }
        level += slope;
        xs.push((level + r.random_range(-1.0..1.0)) as f32);
    }
    let p_missing = r.random_range(0.0..0.3);
    let ok = (0..n).map(|_| !r.random_bool(p_missing)).collect();
    (xs, ok)
}

pub(crate) fn check_trends_against_oracle(xs: &[f32], ok: &[bool], p: &TrendParams) {
    let got = detect_trends(0, xs, ok, p).unwrap();
    // every window's kind must be covered by exactly the event whose span holds it
    let windows = oracle_window_kinds(xs, ok, p);
    let mut merged: Vec<TrendEvent> = vec![];
    let mut open = false;
    for (s, e, k) in windows {
        match k {
            None => open = false,
            Some(k) => {
                match merged.last_mut() {
                    Some(last) if open && last.kind == k => last.end = e,
                    _ => merged.push(TrendEvent { channel: 0, kind: k, start: s, end: e }),
                }
                open = true;
            }
        }
    }
    assert_eq!(got, merged);
}

#[test]
fn trends_match_window_oracle_on_random_series() {
    let mut r = rng(77);
    for _ in 0..100 {
        let n = r.random_range(2..=1440);
        let (xs, ok) = random_piecewise(&mut r, n);
        check_trends_against_oracle(&xs, &ok, &TrendParams::default());
    }
}

fn oracle_spikes(xs: &[f32], ok: &[bool], k: f64) -> Vec<TrendEvent> {
    let v: Vec<f64> = xs.iter().zip(ok).filter(|(_, &o)| o).map(|(&x, _)| f64::from(x)).collect();
    if v.is_empty() {
        return vec![];
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = oracle_std(xs, ok);
    let flag: Vec<Option<TrendKind>> = xs
        .iter()
        .zip(ok)
        .map(|(&x, &o)| {
            let x = f64::from(x);
            if !o {
                None
            } else if x > m + k * sd {
                Some(TrendKind::Spike)
            } else if x < m - k * sd {
                Some(TrendKind::Drop)
            } else {
                None
            }
        })
        .collect();
    let mut out = vec![];
    let mut t = 0;
    while t < xs.len() {
        if let Some(kind) = flag[t] {
            let mut u = t;
            while u + 1 < xs.len() && flag[u + 1] == Some(kind) {
                u += 1;
            }
            let run: Vec<usize> = (t..=u).collect();
            let best = match kind {
                TrendKind::Spike => *run.iter().rev().max_by(|&&a, &&b| xs[a].partial_cmp(&xs[b]).unwrap()).unwrap(),
                _ => *run.iter().rev().min_by(|&&a, &&b| xs[a].partial_cmp(&xs[b]).unwrap()).unwrap(),
            };
            out.push(TrendEvent::point(0, kind, best));
            t = u + 1;
        } else {
            t += 1;
        }
    }
    out
}

pub(crate) fn check_spikes_against_oracle(xs: &[f32], ok: &[bool], k: f64) {
    assert_eq!(detect_spikes(0, xs, ok, k).unwrap(), oracle_spikes(xs, ok, k));
}

#[test]
fn spikes_match_threshold_oracle() {
    let mut r = rng(5);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    for _ in 0..100 {
        let n = r.random_range(1..=1440);
        let heavy = r.random_bool(0.5);
        let xs: Vec<f32> = (0..n)
            .map(|_| {
                let z: f64 = rand_distr::Distribution::sample(&normal, &mut r);
                (if heavy && r.random_bool(0.02) { z * 8.0 } else { z }) as f32
            })
            .collect();
        let ok: Vec<bool> = (0..n).map(|_| r.random_bool(0.9)).collect();
        check_spikes_against_oracle(&xs, &ok, 3.0);
        check_spikes_against_oracle(&xs, &ok, r.random_range(0.5..4.0));
    }
}

#[test]
fn summaries_match_two_pass_oracle() {
    let mut r = rng(8);
    for _ in 0..50 {
        let n = r.random_range(1..500);
        let xs: Vec<f32> = (0..n).map(|_| r.random_range(-100.0..300.0)).collect();
        let mut ok: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
        ok[0] = true;
        let s = summarize_channel(0, &xs, &ok).unwrap();
        let v: Vec<f64> = xs.iter().zip(&ok).filter(|(_, &o)| o).map(|(&x, _)| f64::from(x)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        assert!((s.mean - m).abs() < 1e-9);
        assert!((s.std - oracle_std(&xs, &ok)).abs() < 1e-9);
        assert_eq!(s.min, v.iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(s.max, v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        assert!(s.min <= s.mean && s.mean <= s.max);
    }
}

#[test]
fn statistical_reference_render() {
    let pool = TemplatePool::default();
    let s = StatSummary { channel: 0, mean: 88.7, std: 9.3, min: 70.8, max: 134.9 };
    assert_eq!(
        render_statistical_with(&pool.statistical[0], &s).unwrap(),
        "The average Heart rate value is 88.7, with extremes at 134.9 (max) and 70.8 (min), and a std of 9.3."
    );
    // unrounded inputs land on the same digits
    let s = StatSummary { channel: 0, mean: 88.66, std: 9.25, min: 70.849, max: 134.94 };
    assert_eq!(
        render_statistical_with(&pool.statistical[2], &s).unwrap(),
        "Heart rate average 88.7, reaching a maximum of 134.9 and a minimum of 70.8, with a standard deviation of 9.3."
    );
}

#[test]
fn rounding_is_half_away_from_zero() {
    assert_eq!(format_value(0.25), "0.3");
    assert_eq!(format_value(-0.25), "-0.3");
    assert_eq!(format_value(-0.04), "0.0");
    assert_eq!(format_value(2.0), "2.0");
}

#[test]
fn structural_reference_renders() {
    let pool = TemplatePool::default();
    let trend = TrendEvent { channel: 0, kind: TrendKind::Decreasing, start: 680, end: 960 };
    assert_eq!(
        render_structural_with(&pool.structural[0], &trend).unwrap(),
        "An decreasing trend in Heart rate data recorded between minute 680 and 960."
    );
    let spike = TrendEvent::point(crate::data::STEP_COUNT, TrendKind::Spike, 720);
    let point = pool.of_kind(TemplateKind::Point);
    assert_eq!(render_structural_with(point[0], &spike).unwrap(), "Spike event recorded for steps at minute 720.");
    assert_eq!(render_structural_with(point[2], &spike).unwrap(), "Minute 720 shows a spike for the steps.");
    // a trend template cannot render a point event
    assert!(render_structural_with(&pool.structural[0], &spike).is_err());
}

#[test]
fn semantic_renders() {
    let pool = TemplatePool::default();
    assert_eq!(
        render_semantic_with(&pool, 1, "Outdoor Bike", 1121, 1133).unwrap(),
        "Outdoor Bike recorded within the 1121-1133 minute range."
    );
    assert!(render_semantic(&EventLog::default(), &pool, &mut rng(0)).unwrap().is_empty());
    let log = EventLog {
        activities: vec![ActivityEvent { label: "Walk".into(), start: 3, end: 9 }],
        moods: vec![MoodEvent { label: "Frustrated".into(), minute: 1110 }],
    };
    for seed in 0..20 {
        let s = render_semantic(&log, &pool, &mut rng(seed)).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].contains("Walk") && s[0].contains('3') && s[0].contains('9'));
        assert!(s[1].contains("Frustrated") && s[1].contains("1110"), "{}", s[1]);
    }
}

fn sample_day() -> (SensorDay, EventLog) {
    let seg = Segment { profile: activity_profile("Run").unwrap(), start: 600, end: 640 };
    let (day, mut log) = synthesize_day(12, &[seg]).unwrap();
    log.moods.push(MoodEvent { label: "Calm".into(), minute: 800 });
    (day, log)
}

#[test]
fn sem_only_with_no_events_falls_back() {
    let (day, _) = sample_day();
    let pool = TemplatePool::default();
    let v: CaptionVariant = "sem".parse().unwrap();
    let c = compose_caption(&day, &EventLog::default(), v, &pool, &CaptionParams::default(), &mut rng(1)).unwrap();
    assert_eq!(c.text, NO_EVENTS_SENTENCE);
    assert_eq!(c.levels, BTreeSet::from([Level::Semantic]));
}

#[test]
fn levels_tag_and_determinism() {
    let (day, log) = sample_day();
    let pool = TemplatePool::default();
    let params = CaptionParams::default();
    let c1 = compose_caption(&day, &log, CaptionVariant::STRUCT_SEM, &pool, &params, &mut rng(4)).unwrap();
    let c2 = compose_caption(&day, &log, CaptionVariant::STRUCT_SEM, &pool, &params, &mut rng(4)).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(c1.levels, BTreeSet::from([Level::Structural, Level::Semantic]));
    assert_eq!(c1.source_spans.len(), params.budget);
    assert!(c1.text.contains("Run") && c1.text.contains("Calm"));
    // semantic sentences come last
    let kinds: Vec<SpanKind> = c1.source_spans.iter().map(|s| s.kind).collect();
    let first_sem = kinds.iter().position(|k| matches!(k, SpanKind::Activity | SpanKind::Mood)).unwrap();
    assert!(kinds[first_sem..].iter().all(|k| matches!(k, SpanKind::Activity | SpanKind::Mood)));
}

#[test]
fn budget_is_split_round_robin() {
    assert_eq!(allocate(&[26, 40, 2], 8), vec![3, 3, 2]);
    assert_eq!(allocate(&[0, 40, 3], 8), vec![0, 5, 3]);
    assert_eq!(allocate(&[1, 1], 8), vec![1, 1]);
    assert_eq!(allocate(&[5], 0), vec![0]);
}

#[test]
fn variant_names_round_trip() {
    let names: Vec<String> = CaptionVariant::all().iter().map(|v| v.to_string()).collect();
    assert_eq!(names, ["stat", "struct", "sem", "stat+sem", "struct+sem", "stat+struct", "stat+struct+sem"]);
    for v in CaptionVariant::all() {
        assert_eq!(v.to_string().parse::<CaptionVariant>().unwrap(), v);
    }
    assert!("".parse::<CaptionVariant>().is_err());
    assert!("sem+sem".parse::<CaptionVariant>().is_err());
}

#[test]
fn corpus_lines_round_trip() {
    let rec = CaptionRecord {
        person_id: 1,
        day_id: 2,
        text: "Walk occurred from minute 3 to 9.".into(),
        levels: BTreeSet::from([Level::Semantic]),
        variant: "sem".parse().unwrap(),
    };
    let text = encode_caption_corpus(&[rec.clone()]).unwrap();
    assert!(text.contains("\"variant\":\"sem\""));
    assert_eq!(decode_caption_corpus(&text).unwrap(), vec![rec]);
    assert!(decode_caption_corpus("{}").is_err());
}

/// Every number token of a rendered caption must be derivable from the inputs.
#[test]
fn no_fabricated_numbers() {
    let (day, log) = sample_day();
    let pool = TemplatePool::default();
    let params = CaptionParams { budget: 40, ..CaptionParams::default() };
    let mut allowed: BTreeSet<String> = BTreeSet::new();
    for c in 0..N_CHANNELS {
        if let Ok(s) = summarize_channel(c, day.channel(c), day.channel_mask(c)) {
            for v in [s.mean, s.std, s.min, s.max] {
                allowed.insert(format_value(v));
            }
        }
    }
    for m in 0..MINUTES_PER_DAY {
        allowed.insert(m.to_string());
    }
    // the numbers embedded in channel names
    allowed.insert("80th".into());
    allowed.insert("20th".into());
    for v in CaptionVariant::all() {
        let c = compose_caption(&day, &log, v, &pool, &params, &mut rng(3)).unwrap();
        for tok in crate::text::split_words(&c.text) {
            if tok.chars().next().is_some_and(|ch| ch.is_ascii_digit() || ch == '-') && tok != "-" {
                assert!(allowed.contains(&tok), "fabricated number {tok} in {}", c.text);
            }
        }
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn every_template_renders_fully(
            mean in -1e4f64..1e4, std in 0f64..1e3, channel in 0usize..N_CHANNELS,
            start in 0usize..1400, len in 1usize..40, label in "[A-Z][a-z]{1,8}( [A-Z][a-z]{1,6})?",
        ) {
            let pool = TemplatePool::default();
            let s = StatSummary { channel, mean, std, min: mean - std, max: mean + std };
            for t in &pool.statistical {
                let out = render_statistical_with(t, &s).unwrap();
                prop_assert!(!out.contains(['{', '}']), "{}", out);
            }
            let trend = TrendEvent { channel, kind: TrendKind::Increasing, start, end: start + len };
            let point = TrendEvent::point(channel, TrendKind::Drop, start);
            for t in pool.of_kind(TemplateKind::Trend) {
                let out = render_structural_with(t, &trend).unwrap();
                prop_assert!(!out.contains(['{', '}']), "{}", out);
            }
            for t in pool.of_kind(TemplateKind::Point) {
                let out = render_structural_with(t, &point).unwrap();
                prop_assert!(!out.contains(['{', '}']), "{}", out);
            }
            for i in 0..pool.of_kind(TemplateKind::Activity).len() {
                let out = render_semantic_with(&pool, i, &label, start, start + len).unwrap();
                prop_assert!(out.contains(label.as_str()) && !out.contains(['{', '}']), "{}", out);
            }
        }

        #[test]
        fn detectors_agree_with_oracles(seed in any::<u64>(), n in 2usize..1441) {
            let mut r = rng(seed);
            let (xs, ok) = random_piecewise(&mut r, n);
            check_trends_against_oracle(&xs, &ok, &TrendParams::default());
            check_spikes_against_oracle(&xs, &ok, 3.0);
        }
    }
}
