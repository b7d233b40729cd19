//! Subcommand implementations. Each returns the text printed on success.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use sensorlm::caption::{decode_caption_corpus, encode_caption_corpus, CaptionVariant};
use sensorlm::data::{build_dataset, read_dataset, write_dataset, EventLog, NormStats, SensorDay, EVENTS_FILE, SENSOR_FILE};
use sensorlm::eval::{
    auroc_per_class, caption_metrics, encode_days, encode_texts, few_shot_eval, linear_probe_eval, retrieval_recall,
    EvalReport, ZeroShotClassifier,
};
use sensorlm::model::{decode_checkpoint, encode_checkpoint, Model};
use sensorlm::objectives::LossConfig;
use sensorlm::pipeline::{align_captions, caption_corpus, make_examples};
use sensorlm::text::{normalize_text, Vocabulary};
use sensorlm::trainer::{decode_train_state, encode_train_state, log_csv, train_until, LogRow, TrainState, LOG_HEADER};

use crate::config::RunConfig;
use crate::experiment::{build_vocab, evaluate_cell, fit, pick, prepare, with_stats, CellMetrics, Prepared, Split};
use crate::layout::{read_string, write, RunDir};

/// A resolved config bound to a run directory.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub run: RunDir,
    pub cfg: RunConfig,
    pub force: bool,
}

impl Ctx {
    pub fn seed(&self) -> u64 {
        self.cfg.seed()
    }

    /// Archives the resolved config next to the outputs.
    pub fn archive_config(&self) -> Result<()> {
        write(&self.run.config(), self.cfg.to_toml()?)
    }

    fn dataset(&self) -> Result<(Vec<SensorDay>, Vec<EventLog>)> {
        let dir = self.run.data();
        if !dir.join(SENSOR_FILE).exists() {
            bail!("no dataset in {}; run gen-data first", dir.display());
        }
        Ok(read_dataset(&dir)?)
    }

    fn captions(&self, days: &[SensorDay], variant: CaptionVariant) -> Result<Vec<String>> {
        let path = self.run.captions(variant);
        if !path.exists() {
            bail!("no {variant} captions at {}; run gen-captions with that variant", path.display());
        }
        let records = decode_caption_corpus(&read_string(&path)?)?;
        Ok(align_captions(days, &records, variant)?)
    }
}

pub fn gen_data(ctx: &Ctx) -> Result<String> {
    let dir = ctx.run.data();
    ctx.run.guard(&dir.join(SENSOR_FILE), ctx.force)?;
    ctx.run.guard(&dir.join(EVENTS_FILE), ctx.force)?;
    let set = build_dataset(&ctx.cfg.data, ctx.seed())?;
    let days: Vec<SensorDay> = set.iter().map(|d| d.day.clone()).collect();
    let logs: Vec<EventLog> = set.iter().map(|d| d.log.clone()).collect();
    write_dataset(&dir, &days, &logs)?;
    ctx.archive_config()?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &set {
        *counts.entry(&d.class).or_default() += 1;
    }
    let mut out = String::new();
    for class in &ctx.cfg.data.classes {
        let _ = writeln!(out, "{class}: {} days", counts.get(class.as_str()).copied().unwrap_or(0));
    }
    let _ = write!(out, "{} day records written to {}", set.len(), dir.display());
    Ok(out)
}

pub fn gen_captions(ctx: &Ctx) -> Result<String> {
    let (days, logs) = ctx.dataset()?;
    let pool = ctx.cfg.template_pool()?;
    for &v in &ctx.cfg.corpus.variants {
        ctx.run.guard(&ctx.run.captions(v), ctx.force)?;
    }
    let mut out = String::new();
    for &v in &ctx.cfg.corpus.variants {
        let records = caption_corpus(&days, &logs, v, &pool, &ctx.cfg.caption, ctx.seed())?;
        let path = ctx.run.captions(v);
        write(&path, encode_caption_corpus(&records)?)?;
        let _ = writeln!(out, "{v}: {} captions -> {}", records.len(), path.display());
    }
    ctx.archive_config()?;
    Ok(out.trim_end().to_string())
}

fn load_split(run: &RunDir) -> Result<Split> {
    serde_json::from_str(&read_string(&run.split())?).context("split file")
}

fn load_stats(run: &RunDir) -> Result<NormStats> {
    serde_json::from_str(&read_string(&run.norm_stats())?).context("normalization stats file")
}

fn save_state(run: &RunDir, state: &TrainState) -> Result<()> {
    write(&run.checkpoint(), encode_checkpoint(&state.model)?)?;
    write(&run.train_state(), encode_train_state(state))
}

/// Log rows already on disk for steps before `step`.
fn previous_log(run: &RunDir, step: u64) -> Result<Vec<LogRow>> {
    let path = run.train_log();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (i, line) in read_string(&path)?.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| -> Result<f64> {
            f.get(k).and_then(|x| x.parse().ok()).ok_or_else(|| anyhow!("malformed training log line {}", i + 1))
        };
        let row = LogRow {
            step: f.first().and_then(|x| x.parse().ok()).ok_or_else(|| anyhow!("malformed training log line {}", i + 1))?,
            lr: parse(1)?,
            loss_total: parse(2)?,
            loss_con: parse(3)?,
            loss_cap: parse(4)?,
        };
        if row.step < step {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn cmd_train(ctx: &Ctx, resume: bool, until: Option<u64>) -> Result<String> {
    let run = &ctx.run;
    let cfg = &ctx.cfg;
    if !resume {
        run.guard(&run.checkpoint(), ctx.force)?;
    }
    let (days, logs) = ctx.dataset()?;
    let variant = cfg.train.caption_variant;
    let texts = ctx.captions(&days, variant)?;

    let (prepared, vocab, mut state) = if resume {
        let split = load_split(run)?;
        let stats = load_stats(run)?;
        let labels = sensorlm::pipeline::day_labels(&logs, &cfg.data.classes)?;
        let prepared = with_stats(&days, labels, split, stats);
        let vocab = Vocabulary::from_file_string(&read_string(&run.vocab())?)?;
        let model = decode_checkpoint(&std::fs::read(run.checkpoint()).context("reading checkpoint")?)?;
        let state = decode_train_state(&std::fs::read(run.train_state()).context("reading train state")?, model)?;
        info!("resuming at step {}", state.step);
        (prepared, vocab, state)
    } else {
        let prepared = prepare(&days, &logs, &cfg.data.classes, cfg.eval.test_fraction, ctx.seed())?;
        write(&run.split(), serde_json::to_string(&prepared.split)?)?;
        write(&run.norm_stats(), serde_json::to_string(&prepared.stats)?)?;
        let (vocab, max_len) = build_vocab(&pick(&texts, &prepared.split.train), cfg.eval.min_freq, cfg.model.max_text_len)?;
        write(&run.vocab(), vocab.to_file_string())?;
        let model_cfg = cfg.model.build(vocab.len(), max_len)?;
        (prepared, vocab, TrainState::new(Model::init(model_cfg, ctx.seed())?))
    };
    ctx.archive_config()?;

    let max_len = state.model.config.max_text_len;
    let train_idx = &prepared.split.train;
    let examples = make_examples(&pick(&prepared.norm, train_idx), &pick(&texts, train_idx), &vocab, max_len)?;
    let mut rows = previous_log(run, state.step)?;
    let every = cfg.checkpoint_every;
    let mut save_err = None;
    let stop = until.unwrap_or(cfg.train.steps);
    let result = train_until(&mut state, &examples, &cfg.train, stop, |s, _| {
        if every > 0 && s.step % every == 0 && s.step < cfg.train.steps {
            if let Err(e) = save_state(run, s) {
                save_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(new_rows) => {
            rows.extend(new_rows);
            Ok(())
        }
        Err(d) => Err(d),
    };
    save_state(run, &state)?;
    write(&run.train_log(), if rows.is_empty() { format!("{LOG_HEADER}\n") } else { log_csv(&rows) })?;
    if let Err(d) = outcome {
        bail!("{d}; last good checkpoint (step {}) saved to {}", state.step, run.checkpoint().display());
    }
    let last = rows.last().map_or(f64::NAN, |r| r.loss_total);
    Ok(format!(
        "trained {} steps on {} pairs ({variant} captions), final loss {last:.4}; checkpoint {}",
        state.step,
        examples.len(),
        run.checkpoint().display()
    ))
}

/// Everything evaluation needs from a trained run.
struct Loaded {
    prepared: Prepared,
    vocab: Vocabulary,
    model: Model,
    texts: Vec<String>,
}

fn load_trained(ctx: &Ctx) -> Result<Loaded> {
    let run = &ctx.run;
    let (days, logs) = ctx.dataset()?;
    let labels = sensorlm::pipeline::day_labels(&logs, &ctx.cfg.data.classes)?;
    let prepared = with_stats(&days, labels, load_split(run)?, load_stats(run)?);
    let vocab = Vocabulary::from_file_string(&read_string(&run.vocab())?)?;
    if !run.checkpoint().exists() {
        bail!("no checkpoint at {}; run train first", run.checkpoint().display());
    }
    let model = decode_checkpoint(&std::fs::read(run.checkpoint())?)?;
    if model.config.vocab_size != vocab.len() {
        bail!("checkpoint vocabulary size {} does not match vocab.txt ({})", model.config.vocab_size, vocab.len());
    }
    let texts = ctx.captions(&days, ctx.cfg.train.caption_variant)?;
    Ok(Loaded { prepared, vocab, model, texts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    ZeroShot,
    Retrieval,
    FewShot,
    Caption,
}

impl EvalTask {
    pub fn name(self) -> &'static str {
        match self {
            EvalTask::ZeroShot => "zeroshot",
            EvalTask::Retrieval => "retrieval",
            EvalTask::FewShot => "fewshot",
            EvalTask::Caption => "caption",
        }
    }
}

fn write_report(run: &RunDir, report: &EvalReport) -> Result<String> {
    let name = report.task.as_str();
    write(&run.report(name, "json"), report.to_json()?)?;
    write(&run.report(name, "csv"), report.to_csv())?;
    let text = report.to_text();
    write(&run.report(name, "txt"), &text)?;
    Ok(text.trim_end().to_string())
}

pub fn cmd_eval(ctx: &Ctx, task: EvalTask) -> Result<String> {
    let run = &ctx.run;
    ctx.run.guard(&run.report(task.name(), "json"), ctx.force)?;
    let l = load_trained(ctx)?;
    let classes = &ctx.cfg.data.classes;
    let (train_idx, test_idx) = (&l.prepared.split.train, &l.prepared.split.test);
    let y_test = l.prepared.labels_of(test_idx);
    let mut report = EvalReport::new(task.name(), ctx.cfg.digest()?);
    match task {
        EvalTask::ZeroShot => {
            let zs = ZeroShotClassifier::build(&l.model, &l.vocab, classes)?;
            let s = encode_days(&l.model, &l.prepared.days(test_idx))?;
            let m = zs.evaluate(&s, &y_test)?;
            report.insert("auroc", m.auroc)?;
            report.insert("macro_f1", m.macro_f1)?;
            report.insert("balanced_accuracy", m.balanced_accuracy)?;
            for (c, a) in auroc_per_class(&zs.scores(&s)?, &y_test)?.into_iter().enumerate() {
                match a {
                    Some(a) => report.insert(format!("auroc.{}", classes[c]), a)?,
                    None => report.notes.push(format!("class {} absent from the test split", classes[c])),
                }
            }
        }
        EvalTask::Retrieval => {
            let s = encode_days(&l.model, &l.prepared.days(test_idx))?;
            let t = encode_texts(&l.model, &l.vocab, &pick(&l.texts, test_idx))?;
            for &k in &ctx.cfg.eval.recall_k {
                if k == 0 || k > s.nrows() {
                    report.notes.push(format!("R@{k} skipped: {} test pairs", s.nrows()));
                    continue;
                }
                let (a, b) = retrieval_recall(&s, &t, k)?;
                report.insert(format!("sensor_to_text_r@{k}"), a)?;
                report.insert(format!("text_to_sensor_r@{k}"), b)?;
            }
        }
        EvalTask::FewShot => {
            let s_train = encode_days(&l.model, &l.prepared.days(train_idx))?;
            let s_test = encode_days(&l.model, &l.prepared.days(test_idx))?;
            let y_train = l.prepared.labels_of(train_idx);
            let e = &ctx.cfg.eval;
            let full = linear_probe_eval(&s_train, &y_train, &s_test, &y_test, classes.len(), &e.probe)?;
            report.insert("probe_auroc", full.auroc)?;
            report.insert("probe_macro_f1", full.macro_f1)?;
            report.insert("probe_balanced_accuracy", full.balanced_accuracy)?;
            let points = few_shot_eval(
                &s_train, &y_train, &s_test, &y_test, classes.len(), &e.few_shot_sizes, e.few_shot_draws, ctx.seed(), &e.probe,
            )?;
            for p in points {
                report.insert(format!("auroc_{}shot_mean", p.n), p.mean)?;
                report.insert(format!("auroc_{}shot_std", p.n), p.std)?;
            }
        }
        EvalTask::Caption => {
            let n = test_idx.len().min(ctx.cfg.eval.caption_limit);
            let (mut f1, mut rl, mut exact) = (0.0, 0.0, 0usize);
            for &i in &test_idx[..n] {
                let generated = l.vocab.detokenize(&l.model.generate(&l.prepared.norm[i], l.model.config.max_text_len)?);
                let m = caption_metrics(&generated, &l.texts[i])?;
                f1 += m.token_f1;
                rl += m.rouge_l;
                exact += usize::from(generated == normalize_text(&l.texts[i]));
            }
            if n == 0 {
                bail!("no test days to caption");
            }
            report.insert("token_f1", f1 / n as f64)?;
            report.insert("rouge_l", rl / n as f64)?;
            report.insert("exact_match", exact as f64 / n as f64)?;
            report.notes.push(format!("{n} test days captioned greedily"));
        }
    }
    write_report(run, &report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub person_id: u64,
    pub day_id: u64,
    pub reference: String,
    pub generated: String,
    pub exact: bool,
}

/// Greedy captions for a split; returns the records and writes them as JSONL.
pub fn cmd_caption(ctx: &Ctx, split: &str, limit: Option<usize>) -> Result<(String, Vec<GeneratedCaption>)> {
    let run = &ctx.run;
    let path = run.reports().join(format!("captions-{split}.jsonl"));
    run.guard(&path, ctx.force)?;
    let l = load_trained(ctx)?;
    let idx = match split {
        "train" => &l.prepared.split.train,
        "test" => &l.prepared.split.test,
        other => bail!("unknown split {other:?}; expected train or test"),
    };
    let idx = &idx[..limit.map_or(idx.len(), |n| n.min(idx.len()))];
    let mut out = Vec::with_capacity(idx.len());
    let mut jsonl = String::new();
    for &i in idx {
        let d = &l.prepared.norm[i];
        let generated = l.vocab.detokenize(&l.model.generate(d, l.model.config.max_text_len)?);
        let reference = normalize_text(&l.texts[i]);
        let rec = GeneratedCaption { person_id: d.person_id, day_id: d.day_id, exact: generated == reference, reference, generated };
        jsonl.push_str(&serde_json::to_string(&rec)?);
        jsonl.push('\n');
        out.push(rec);
    }
    write(&path, jsonl)?;
    let exact = out.iter().filter(|r| r.exact).count();
    Ok((format!("{exact}/{} exact matches on the {split} split; captions in {}", out.len(), path.display()), out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CellMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_digest: String,
    pub caption_rows: Vec<AblationRow>,
    pub loss_rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 5] = ["zs_auroc", "zs_f1", "zs_bacc", "probe_auroc", "r@1"];

impl AblationReport {
    pub fn failures(&self) -> usize {
        self.caption_rows.iter().chain(&self.loss_rows).filter(|r| r.error.is_some()).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let table = |s: &mut String, title: &str, rows: &[AblationRow]| {
            let _ = writeln!(s, "{title}");
            let _ = write!(s, "{:<16}", "row");
            for c in COLUMNS {
                let _ = write!(s, " {c:>11}");
            }
            s.push('\n');
            for r in rows {
                let _ = write!(s, "{:<16}", r.name);
                match (&r.metrics, &r.error) {
                    (Some(m), _) => {
                        for v in [m.zs_auroc, m.zs_f1, m.zs_bacc, m.probe_auroc, m.r_at_1] {
                            let _ = write!(s, " {v:>11.4}");
                        }
                    }
                    (None, e) => {
                        let _ = write!(s, " failed: {}", e.as_deref().unwrap_or("unknown"));
                    }
                }
                s.push('\n');
            }
        };
        table(&mut s, "caption variants (CoCa loss)", &self.caption_rows);
        s.push('\n');
        table(&mut s, "loss variants (struct+sem captions)", &self.loss_rows);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("table,row,{},error\n", COLUMNS.join(","));
        for (table, rows) in [("caption", &self.caption_rows), ("loss", &self.loss_rows)] {
            for r in rows {
                match &r.metrics {
                    Some(m) => {
                        let _ = writeln!(s, "{table},{},{},{},{},{},{},", r.name, m.zs_auroc, m.zs_f1, m.zs_bacc, m.probe_auroc, m.r_at_1);
                    }
                    None => {
                        let e = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
                        let _ = writeln!(s, "{table},{},,,,,,{e}", r.name);
                    }
                }
            }
        }
        s
    }
}

/// Trains and evaluates the 7 caption-variant cells and the 3 loss-variant cells.
///
/// A failing cell is recorded and the grid continues. The CoCa struct+sem
/// cell appears in both tables and is trained once.
pub fn cmd_ablate(ctx: &Ctx) -> Result<(String, AblationReport)> {
    let run = &ctx.run;
    run.guard(&run.report("ablation", "json"), ctx.force)?;
    let cfg = &ctx.cfg;
    let mut data = cfg.data.clone();
    data.days_per_class = cfg.ablation.days_per_class;
    let set = build_dataset(&data, ctx.seed())?;
    let days: Vec<SensorDay> = set.iter().map(|d| d.day.clone()).collect();
    let logs: Vec<EventLog> = set.iter().map(|d| d.log.clone()).collect();
    let prepared = prepare(&days, &logs, &data.classes, cfg.eval.test_fraction, ctx.seed())?;
    let pool = cfg.template_pool()?;
    let mut model = cfg.model.clone();
    model.max_text_len = cfg.ablation.max_text_len;

    let run_cell = |variant: CaptionVariant, loss: LossConfig| -> Result<CellMetrics> {
        let records = caption_corpus(&days, &logs, variant, &pool, &cfg.caption, ctx.seed())?;
        let texts: Vec<String> = records.into_iter().map(|r| r.text).collect();
        let (vocab, max_len) = build_vocab(&pick(&texts, &prepared.split.train), cfg.eval.min_freq, model.max_text_len)?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.steps = cfg.ablation.steps;
        train_cfg.loss = loss;
        train_cfg.caption_variant = variant;
        let (state, _) = fit(&prepared, &texts, &vocab, max_len, &model, &train_cfg, |_, _| {})?;
        evaluate_cell(&state.model, &vocab, &prepared, &texts, &data.classes, &cfg.eval.probe)
    };
    let row = |name: String, r: Result<CellMetrics>| match r {
        Ok(m) => AblationRow { name, metrics: Some(m), error: None },
        Err(e) => {
            warn!("ablation cell {name} failed: {e:#}");
            AblationRow { name, metrics: None, error: Some(format!("{e:#}")) }
        }
    };

    let mut cache: BTreeMap<(CaptionVariant, String), AblationRow> = BTreeMap::new();
    let mut cell = |variant: CaptionVariant, loss_name: &str, label: String| -> AblationRow {
        let key = (variant, loss_name.to_string());
        if let Some(r) = cache.get(&key) {
            return AblationRow { name: label, ..r.clone() };
        }
        info!("ablation cell {variant} / {loss_name}");
        let weights = LossConfig::preset(loss_name).expect("known loss preset");
        let loss = LossConfig { lambda_con: weights.lambda_con, lambda_cap: weights.lambda_cap, ..cfg.train.loss };
        let r = row(label, run_cell(variant, loss));
        cache.insert(key, r.clone());
        r
    };
    let caption_rows: Vec<AblationRow> = CaptionVariant::all().into_iter().map(|v| cell(v, "coca", v.to_string())).collect();
    let loss_rows: Vec<AblationRow> =
        ["clip", "cap", "coca"].into_iter().map(|l| cell(CaptionVariant::STRUCT_SEM, l, l.to_string())).collect();
    let report = AblationReport { config_digest: cfg.digest()?, caption_rows, loss_rows };
    write(&run.report("ablation", "json"), serde_json::to_string_pretty(&report)?)?;
    write(&run.report("ablation", "csv"), report.to_csv())?;
    let text = report.to_text();
    write(&run.report("ablation", "txt"), &text)?;
    ctx.archive_config()?;
    if report.failures() > 0 {
        bail!("{} ablation cell(s) failed; see {}\n{text}", report.failures(), run.report("ablation", "txt").display());
    }
    Ok((text.trim_end().to_string(), report))
}

/// Loads the config for a command: an explicit file, else the run's archived config, else defaults.
pub fn load_config(config: Option<&Path>, run: &RunDir, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None if run.config().exists() => RunConfig::load(&run.config())?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(seed)?;
    cfg.validate()?;
    Ok(cfg)
}
