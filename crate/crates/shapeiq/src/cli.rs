//! The `shapeiq` command line.
//!
//! Every command accepts `--config FILE` (a `key = value` file whose keys are
//! long flag names) and writes a snapshot of its resolved settings in the
//! same format next to its outputs, so a run can be repeated with
//! `--config <snapshot>`. Flags given on the command line win over the file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shapeiq_core::models::{
    build, evaluate_autoencoder, evaluate_classifier, train, Architecture, ModelKind, RecordSource,
    TrainConfig, DESK_WIDTHS, PAPER_WIDTHS,
};
use shapeiq_core::nn::{gradcheck_suite, Adam, AdamConfig, LrSchedule};
use shapeiq_core::oracle::{predict_next, solve};
use shapeiq_core::qgen::{DatasetConfig, NormalizationStats, QuestionFamily, Record, Scenario, StatsAccumulator};

use crate::checkpoint;
use crate::dataset::{self, DatasetReader, Subset};
use crate::image::{question_sheet, Image, SheetRow};
use crate::kv::KvFile;
use crate::manifest::{manifest_path, DatasetInfo};

pub const OUT_DIR_ENV: &str = "SHAPEIQ_OUT_DIR";
const DESK_TOTAL: usize = 20_000;
const PAPER_TOTAL: usize = 100_000;
const DESK_EPOCHS: usize = 30;
const PAPER_EPOCHS: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "shapeiq", version, about = "Geometric IQ questions: generate, train, evaluate, solve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset file, its manifest and contact sheets.
    Generate(GenerateArgs),
    /// Train a classifier or autoencoder on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Answer a dataset with the analytic solver.
    Solve(SolveArgs),
    /// Draw dataset questions as PNG.
    Render(RenderArgs),
    /// Finite-difference gradient check of every layer kind.
    Gradcheck(GradcheckArgs),
    /// Collect the CSV outputs under a directory into a Markdown report.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// `key = value` file of flag defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// `mc` (multiple choice) or `open`.
    #[arg(long, default_value = "mc", value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Number of records [default: 20000, or 100000 with --paper-scale].
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Restrict to these families (comma separated); default is every
    /// family of the scenario.
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    pub family: Vec<QuestionFamily>,
    /// Gaussian noise standard deviation on the 0–255 scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Base name of the output files.
    #[arg(long, default_value = "dataset")]
    pub name: String,
    /// Questions per family on the contact sheets.
    #[arg(long, default_value_t = 16)]
    pub sheet_rows: usize,
    #[arg(long)]
    pub paper_scale: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `classifier` or `autoencoder`.
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Training dataset (`.pfq`).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset; without it a holdout split of `--data` is used.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Fraction of the training records held out for validation when no
    /// `--val` is given.
    #[arg(long, default_value_t = 0.05)]
    pub holdout: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    pub family: Vec<QuestionFamily>,
    /// Use at most this many training records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Total epochs [default: 30, or 100 with --paper-scale].
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Base learning rate, divided by 10 every 100 epochs.
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Conv widths `a,b,c,d` [default: 16,32,64,128, or 64,128,256,512
    /// with --paper-scale].
    #[arg(long, value_parser = parse_widths)]
    pub widths: Option<Widths>,
    #[arg(long)]
    pub paper_scale: bool,
    /// Autoencoder without batch normalization.
    #[arg(long)]
    pub no_batchnorm: bool,
    /// Keep multiple-choice options in stored order during training.
    #[arg(long)]
    pub no_shuffle_options: bool,
    /// Continue from this checkpoint up to `--epochs` in total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    pub family: Vec<QuestionFamily>,
    /// Questions on the misclassification / prediction sheet.
    #[arg(long, default_value_t = 16)]
    pub sheet_rows: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    pub family: Vec<QuestionFamily>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// First record to draw.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Also write every frame as its own PNG, enlarged by this factor.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiply the conv input gradient by this factor (negative control).
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub skew_conv: f32,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory to scan; the report is written there as `report.md`.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Widths(pub [usize; 4]);

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::from_name(s).ok_or_else(|| format!("unknown scenario `{s}` (mc, open)"))
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::from_name(s).ok_or_else(|| format!("unknown model `{s}` (classifier, autoencoder)"))
}

fn parse_family(s: &str) -> Result<QuestionFamily, String> {
    QuestionFamily::from_name(s).ok_or_else(|| {
        let names: Vec<_> = QuestionFamily::ALL.iter().map(|f| f.name()).collect();
        format!("unknown family `{s}` ({})", names.join(", "))
    })
}

fn parse_widths(s: &str) -> Result<Widths, String> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().map_err(|_| format!("bad width `{x}`"))).collect::<Result<_, _>>()?;
    let w: [usize; 4] = v.try_into().map_err(|_| "expected four widths".to_string())?;
    if w.contains(&0) {
        return Err("widths must be positive".into());
    }
    Ok(Widths(w))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Splices the `--config` file's entries into `args` as flags, right after
/// the subcommand, skipping any flag that is also given explicitly.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(2) {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let kv = KvFile::read(&path)?;
    let given = |key: &str| {
        let flag = format!("--{key}");
        args.iter().skip(2).any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        })
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (k, v) in &kv.entries {
        if k == "config" || given(k) {
            continue;
        }
        match v.as_str() {
            "true" => injected.push(format!("--{k}").into()),
            "false" => {}
            _ => injected.push(format!("--{k}={v}").into()),
        }
    }
    let split = args.len().min(2);
    Ok(args[..split].iter().cloned().chain(injected).chain(args[split..].iter().cloned()).collect())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: Vec<OsString>) -> Result<ExitCode> {
    let args = expand_config(args)?;
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn snapshot(out: &Path, file: &str, kv: &KvFile) -> Result<()> {
    let path = out.join(file);
    kv.write(&path).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    crate::write_atomic(path, |f| f.write_all(&bytes)).with_context(|| format!("writing {}", path.display()))
}

fn open_dataset(path: &Path) -> Result<DatasetReader> {
    DatasetReader::open(path).with_context(|| format!("opening dataset {}", path.display()))
}

/// Record indices whose family is in `families` (all when empty).
fn select(reader: &mut DatasetReader, families: &[QuestionFamily]) -> Result<(Vec<usize>, Vec<QuestionFamily>)> {
    let all = reader.families()?;
    let idx: Vec<usize> = (0..all.len()).filter(|&i| families.is_empty() || families.contains(&all[i])).collect();
    ensure!(!idx.is_empty(), "{}: no records of the selected families", reader.path().display());
    Ok((idx, all))
}

/// Statistics from the dataset's manifest, or computed by a pass over the
/// records when there is none.
fn dataset_stats(reader: &mut DatasetReader) -> Result<NormalizationStats> {
    let m = manifest_path(reader.path());
    if m.exists() {
        return Ok(DatasetInfo::read(&m)?.stats);
    }
    let mut acc = StatsAccumulator::default();
    for r in reader.iter() {
        r?.frames().into_iter().for_each(|f| acc.add(f));
    }
    acc.finish().context("dataset has a constant channel")
}

fn cmd_generate(a: &GenerateArgs) -> Result<ExitCode> {
    let total = a.total.unwrap_or(if a.paper_scale { PAPER_TOTAL } else { DESK_TOTAL });
    let families = if a.family.is_empty() { a.scenario.families().to_vec() } else { a.family.clone() };
    if a.scenario == Scenario::Open {
        if let Some(f) = families.iter().find(|f| !f.has_open_form()) {
            bail!("{f} has no open-question form");
        }
    }
    let config = DatasetConfig::with_families(a.scenario, &families, total, a.seed).with_noise(a.noise_sigma);
    config.validate()?;
    let out = &a.common.out;
    let data = out.join(format!("{}.pfq", a.name));
    let mut kv = KvFile::new();
    kv.push("scenario", a.scenario)
        .push("total", total)
        .push("seed", a.seed)
        .push("family", join(&families))
        .push("noise-sigma", a.noise_sigma)
        .push("name", &a.name)
        .push("sheet-rows", a.sheet_rows)
        .push("out", out.display());
    snapshot(out, &format!("{}.generate.config", a.name), &kv)?;

    let start = Instant::now();
    let mut samples: Vec<Vec<Record>> = vec![Vec::new(); 7];
    let step = (total / 10).max(1);
    let generated = dataset::generate(&data, &config, &mut |i, r| {
        let bucket = &mut samples[r.family().code() as usize];
        if bucket.len() < a.sheet_rows {
            bucket.push(r.clone());
        }
        if total >= 1000 && (i + 1) % step == 0 {
            eprintln!("  {}/{total} records", i + 1);
        }
    })
    .with_context(|| format!("writing {}", data.display()))?;
    let info = DatasetInfo {
        manifest: generated.manifest,
        stats: generated.stats,
        sha256: generated.sha256.clone(),
        data: format!("{}.pfq", a.name),
    };
    info.write(&manifest_path(&data))?;
    for (code, rows) in samples.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let family = QuestionFamily::from_code(code as u8).expect("family code");
        let rows: Vec<SheetRow> = rows.into_iter().map(SheetRow::plain).collect();
        question_sheet(&rows).save(&out.join("sheets").join(format!("{}_{family}.png", a.name)))?;
    }
    println!("wrote {} ({total} {} records, {:.1}s)", data.display(), a.scenario, start.elapsed().as_secs_f64());
    println!("sha256 {}", generated.sha256);
    Ok(ExitCode::SUCCESS)
}

const HISTORY_HEADER_CLASSIFIER: [&str; 5] = ["epoch", "lr", "train_loss", "val_loss", "val_accuracy"];
const HISTORY_HEADER_AUTOENCODER: [&str; 5] = ["epoch", "lr", "train_loss", "val_loss", "val_mse"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows of an existing history file up to and including `epoch`.
fn previous_history(path: &Path, epoch: u32) -> Result<Vec<Vec<String>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for r in csv::Reader::from_path(path)?.records() {
        let r = r?;
        if r.get(0).and_then(|e| e.parse::<u32>().ok()).is_some_and(|e| e <= epoch) {
            rows.push(r.iter().map(String::from).collect());
        }
    }
    Ok(rows)
}

fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let out = &a.common.out;
    let epochs = a.epochs.unwrap_or(if a.paper_scale { PAPER_EPOCHS } else { DESK_EPOCHS });
    ensure!(a.batch_size >= 2, "batch size must be at least 2");
    ensure!((0.0..1.0).contains(&a.holdout), "holdout must be in [0, 1)");
    ensure!(a.lr.is_finite() && a.lr > 0.0, "learning rate must be positive");
    if a.no_batchnorm && a.model == ModelKind::Classifier {
        bail!("--no-batchnorm applies to the autoencoder only");
    }
    let mut reader = open_dataset(&a.data)?;
    let needed = a.model.scenario();
    if reader.scenario() != needed {
        bail!("{} holds {} records, but a {} trains on {} records", a.data.display(), reader.scenario(), a.model, needed);
    }
    let (mut train_idx, _) = select(&mut reader, &a.family)?;

    let resumed = a.resume.as_deref().map(checkpoint::load_model).transpose().context("loading the resume checkpoint")?;
    let widths = a.widths.map(|w| w.0).unwrap_or(if a.paper_scale { PAPER_WIDTHS } else { DESK_WIDTHS });
    let arch = Architecture { kind: a.model, widths, batchnorm: !a.no_batchnorm };
    let (mut model, stats, adam, done) = match resumed {
        Some((model, ck)) => {
            ensure!(ck.arch.kind == a.model, "checkpoint holds a {}, not a {}", ck.arch.kind, a.model);
            let adam = ck.adam.map(|(config, state)| Adam { config, state });
            (model, ck.stats, adam, ck.epoch)
        }
        None => (build(arch, a.seed)?, dataset_stats(&mut reader)?, None, 0),
    };
    ensure!((done as usize) < epochs, "checkpoint is already at epoch {done} of {epochs}");

    let mut val_reader = match &a.val {
        Some(p) => {
            let mut r = open_dataset(p)?;
            ensure!(r.scenario() == needed, "{} holds {} records", p.display(), r.scenario());
            let (idx, _) = select(&mut r, &a.family)?;
            Some((r, idx))
        }
        None => None,
    };
    let mut holdout = Vec::new();
    if val_reader.is_none() && a.holdout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(u64::MAX);
        train_idx.shuffle(&mut rng);
        let k = ((train_idx.len() as f64 * a.holdout).ceil() as usize).min(train_idx.len() - 1);
        holdout = train_idx.split_off(train_idx.len() - k);
        train_idx.sort_unstable();
        holdout.sort_unstable();
    }
    if let Some(limit) = a.limit {
        train_idx.truncate(limit);
    }
    ensure!(train_idx.len() >= 2, "need at least two training records");

    let mut kv = KvFile::new();
    kv.push("model", a.model).push("data", a.data.display());
    if let Some(v) = &a.val {
        kv.push("val", v.display());
    }
    kv.push("holdout", a.holdout);
    if !a.family.is_empty() {
        kv.push("family", join(&a.family));
    }
    if let Some(l) = a.limit {
        kv.push("limit", l);
    }
    kv.push("epochs", epochs)
        .push("batch-size", a.batch_size)
        .push("lr", a.lr)
        .push("seed", a.seed)
        .push("widths", join(&model.arch.widths))
        .push("no-batchnorm", !model.arch.batchnorm)
        .push("no-shuffle-options", a.no_shuffle_options);
    if let Some(r) = &a.resume {
        kv.push("resume", r.display());
    }
    kv.push("out", out.display());
    snapshot(out, "train.config", &kv)?;

    let config = TrainConfig {
        batch_size: a.batch_size,
        epochs: 1,
        schedule: LrSchedule::new(a.lr),
        adam: AdamConfig::default(),
        seed: a.seed,
        shuffle_options: !a.no_shuffle_options,
    };
    let ck_path = out.join("model.pfck");
    let history_path = out.join("history.csv");
    let header = match a.model {
        ModelKind::Classifier => HISTORY_HEADER_CLASSIFIER,
        ModelKind::Autoencoder => HISTORY_HEADER_AUTOENCODER,
    };
    let mut rows = if done > 0 { previous_history(&history_path, done)? } else { Vec::new() };
    println!(
        "training {} ({}, {} parameters) on {} records, {} validation",
        a.model,
        model.arch.descriptor(),
        model.param_count(),
        train_idx.len(),
        val_reader.as_ref().map_or(holdout.len(), |(_, i)| i.len())
    );
    // The holdout split gets its own read handle on the training file.
    let mut holdout_reader = if holdout.is_empty() { None } else { Some(reader.reopen()?) };
    let mut adam = adam;
    for _ in done as usize..epochs {
        let start = Instant::now();
        let mut train_set = Subset::new(&mut reader, train_idx.clone());
        let mut val = match (&mut val_reader, &mut holdout_reader) {
            (Some((r, idx)), _) => Some(Subset::new(r, idx.clone())),
            (None, Some(r)) => Some(Subset::new(r, holdout.clone())),
            (None, None) => None,
        };
        let val_dyn = val.as_mut().map(|v| v as &mut dyn RecordSource);
        let (next, history) = train(&mut model, &mut train_set, val_dyn, &stats, &config, adam.take(), &mut |_| {})?;
        let e = history[0];
        rows.push(vec![e.epoch.to_string(), e.lr.to_string(), e.train_loss.to_string(), opt(e.val_loss), opt(e.val_accuracy.or(e.val_mse))]);
        let ck = model.checkpoint(Some((&next.config, &next.state)), stats, e.epoch as u32);
        checkpoint::save(&ck_path, &ck)?;
        write_csv(&history_path, &header, &rows)?;
        let metric = match (e.val_accuracy, e.val_mse) {
            (Some(acc), _) => format!(" val_accuracy {acc:.4}"),
            (_, Some(mse)) => format!(" val_mse {mse:.3e}"),
            _ => String::new(),
        };
        println!(
            "epoch {:>3}/{epochs} lr {:.1e} train_loss {:.5}{}{metric} ({:.0}s)",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val_loss.map(|v| format!(" val_loss {v:.5}")).unwrap_or_default(),
            start.elapsed().as_secs_f64()
        );
        adam = Some(next);
    }
    println!("wrote {} and {}", ck_path.display(), history_path.display());
    Ok(ExitCode::SUCCESS)
}

fn family_rows<T>(present: &[QuestionFamily], mut row: impl FnMut(Option<QuestionFamily>) -> T) -> Vec<T> {
    let mut out: Vec<T> = QuestionFamily::ALL.iter().filter(|f| present.contains(f)).map(|&f| row(Some(f))).collect();
    out.push(row(None));
    out
}

fn cmd_eval(a: &EvalArgs) -> Result<ExitCode> {
    let out = &a.common.out;
    let (mut model, ck) = checkpoint::load_model(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut reader = open_dataset(&a.data)?;
    let kind = model.kind();
    if reader.scenario() != kind.scenario() {
        bail!("{} holds {} records, but the checkpoint is a {}", a.data.display(), reader.scenario(), kind);
    }
    let (idx, all_families) = select(&mut reader, &a.family)?;
    let mut kv = KvFile::new();
    kv.push("checkpoint", a.checkpoint.display()).push("data", a.data.display());
    if !a.family.is_empty() {
        kv.push("family", join(&a.family));
    }
    kv.push("sheet-rows", a.sheet_rows).push("out", out.display());
    snapshot(out, "eval.config", &kv)?;
    let families: Vec<QuestionFamily> = idx.iter().map(|&i| all_families[i]).collect();
    let stats = ck.stats;
    match kind {
        ModelKind::Classifier => {
            let r = evaluate_classifier(&mut model, &mut Subset::new(&mut reader, idx.clone()), &stats)?;
            let rows = family_rows(&families, |f| {
                let sel: Vec<usize> = (0..idx.len()).filter(|&i| f.is_none_or(|f| families[i] == f)).collect();
                let correct = sel.iter().filter(|&&i| r.predictions[i] == r.labels[i]).count();
                let p: f64 = sel.iter().map(|&i| r.probabilities[i][r.labels[i]] as f64).sum();
                let n = sel.len();
                vec![
                    f.map_or("overall".into(), |f| f.to_string()),
                    n.to_string(),
                    correct.to_string(),
                    (correct as f64 / n as f64).to_string(),
                    (p / n as f64).to_string(),
                ]
            });
            write_csv(&out.join("metrics.csv"), &["family", "count", "correct", "accuracy", "mean_correct_probability"], &rows)?;
            let dump: Vec<Vec<String>> = (0..idx.len())
                .map(|i| {
                    let mut row = vec![idx[i].to_string(), families[i].to_string(), r.labels[i].to_string(), r.predictions[i].to_string()];
                    row.extend(r.probabilities[i].iter().map(|p| p.to_string()));
                    row
                })
                .collect();
            write_csv(&out.join("probabilities.csv"), &["index", "family", "label", "prediction", "p0", "p1", "p2", "p3"], &dump)?;
            let mut sheet = Vec::new();
            for i in (0..idx.len()).filter(|&i| r.predictions[i] != r.labels[i]).take(a.sheet_rows) {
                sheet.push(SheetRow {
                    record: reader.read(idx[i])?,
                    probabilities: Some(r.probabilities[i]),
                    choice: Some(r.predictions[i]),
                    predicted: None,
                });
            }
            question_sheet(&sheet).save(&out.join("misclassified.png"))?;
            for row in &rows {
                println!("{:<18} {:>6} accuracy {:.4}", row[0], row[1], row[3].parse::<f64>().unwrap_or(f64::NAN));
            }
        }
        ModelKind::Autoencoder => {
            let r = evaluate_autoencoder(&mut model, &mut Subset::new(&mut reader, idx.clone()), &stats)?;
            let rows = family_rows(&families, |f| {
                let sel: Vec<f64> = (0..idx.len()).filter(|&i| f.is_none_or(|f| families[i] == f)).map(|i| r.mse[i]).collect();
                vec![
                    f.map_or("overall".into(), |f| f.to_string()),
                    sel.len().to_string(),
                    (sel.iter().sum::<f64>() / sel.len() as f64).to_string(),
                ]
            });
            write_csv(&out.join("metrics.csv"), &["family", "count", "mse"], &rows)?;
            let dump: Vec<Vec<String>> =
                (0..idx.len()).map(|i| vec![idx[i].to_string(), families[i].to_string(), r.mse[i].to_string()]).collect();
            write_csv(&out.join("per_question.csv"), &["index", "family", "mse"], &dump)?;
            let mut sheet = Vec::new();
            for &i in idx.iter().take(a.sheet_rows) {
                let record = reader.read(i)?;
                let predicted = match &record {
                    Record::Open(q) => Some(model.predict_frame(&q.context, &stats)?),
                    Record::MultipleChoice(_) => None,
                };
                sheet.push(SheetRow { record, probabilities: None, choice: None, predicted });
            }
            question_sheet(&sheet).save(&out.join("predictions.png"))?;
            for row in &rows {
                println!("{:<18} {:>6} mse {:.3e}", row[0], row[1], row[2].parse::<f64>().unwrap_or(f64::NAN));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(a: &SolveArgs) -> Result<ExitCode> {
    let out = &a.common.out;
    let mut reader = open_dataset(&a.data)?;
    let (mut idx, all_families) = select(&mut reader, &a.family)?;
    if let Some(l) = a.limit {
        idx.truncate(l);
    }
    let mut kv = KvFile::new();
    kv.push("data", a.data.display());
    if !a.family.is_empty() {
        kv.push("family", join(&a.family));
    }
    if let Some(l) = a.limit {
        kv.push("limit", l);
    }
    kv.push("out", out.display());
    snapshot(out, "solve.config", &kv)?;
    let families: Vec<QuestionFamily> = idx.iter().map(|&i| all_families[i]).collect();
    let start = Instant::now();
    match reader.scenario() {
        Scenario::MultipleChoice => {
            let mut correct = Vec::with_capacity(idx.len());
            let mut disagreements = Vec::new();
            for &i in &idx {
                let Record::MultipleChoice(q) = reader.read(i)? else { unreachable!("scenario checked") };
                let s = solve(&q);
                let ok = s.index == q.answer_index as usize;
                correct.push(ok);
                if !ok {
                    let mut row = vec![i.to_string(), q.family.to_string(), q.answer_index.to_string(), s.index.to_string()];
                    row.extend(s.distances.iter().map(|d| d.to_string()));
                    disagreements.push(row);
                }
            }
            let rows = family_rows(&families, |f| {
                let sel: Vec<bool> = (0..idx.len()).filter(|&i| f.is_none_or(|f| families[i] == f)).map(|i| correct[i]).collect();
                let c = sel.iter().filter(|&&b| b).count();
                vec![f.map_or("overall".into(), |f| f.to_string()), sel.len().to_string(), c.to_string(), (c as f64 / sel.len() as f64).to_string()]
            });
            write_csv(&out.join("oracle_metrics.csv"), &["family", "count", "correct", "accuracy"], &rows)?;
            write_csv(&out.join("disagreements.csv"), &["index", "family", "label", "oracle", "d0", "d1", "d2", "d3"], &disagreements)?;
            for row in &rows {
                println!("{:<18} {:>6} accuracy {:.4}", row[0], row[1], row[3].parse::<f64>().unwrap_or(f64::NAN));
            }
            println!("{} label disagreements ({:.1}s)", disagreements.len(), start.elapsed().as_secs_f64());
        }
        Scenario::Open => {
            let mut mse = Vec::with_capacity(idx.len());
            for &i in &idx {
                let Record::Open(q) = reader.read(i)? else { unreachable!("scenario checked") };
                let (frame, _) = predict_next(&q.context);
                mse.push(frame.mse(&q.target));
            }
            let rows = family_rows(&families, |f| {
                let sel: Vec<f64> = (0..idx.len()).filter(|&i| f.is_none_or(|f| families[i] == f)).map(|i| mse[i]).collect();
                vec![f.map_or("overall".into(), |f| f.to_string()), sel.len().to_string(), (sel.iter().sum::<f64>() / sel.len() as f64).to_string()]
            });
            write_csv(&out.join("oracle_metrics.csv"), &["family", "count", "mse"], &rows)?;
            for row in &rows {
                println!("{:<18} {:>6} mse {:.3e}", row[0], row[1], row[2].parse::<f64>().unwrap_or(f64::NAN));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_render(a: &RenderArgs) -> Result<ExitCode> {
    let out = &a.common.out;
    let mut reader = open_dataset(&a.data)?;
    ensure!(a.index < reader.len(), "index {} is past the last record ({})", a.index, reader.len());
    let end = (a.index + a.count.max(1)).min(reader.len());
    let mut kv = KvFile::new();
    kv.push("data", a.data.display()).push("index", a.index).push("count", a.count);
    if let Some(s) = a.frames {
        kv.push("frames", s);
    }
    kv.push("out", out.display());
    snapshot(out, "render.config", &kv)?;
    let mut rows = Vec::new();
    for i in a.index..end {
        let record = reader.read(i)?;
        if let Some(scale) = a.frames {
            for (k, frame) in record.frames().into_iter().enumerate() {
                Image::from_canvas(frame, scale.max(1)).save(&out.join(format!("q{i}_f{k}.png")))?;
            }
        }
        rows.push(SheetRow::plain(record));
    }
    let path = out.join(format!("questions_{}-{}.png", a.index, end - 1));
    question_sheet(&rows).save(&path)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let out = &a.common.out;
    let mut kv = KvFile::new();
    kv.push("seed", a.seed).push("out", out.display());
    if a.skew_conv != 1.0 {
        kv.push("skew-conv", a.skew_conv);
    }
    snapshot(out, "gradcheck.config", &kv)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let entries = gradcheck_suite(&mut rng, a.skew_conv)?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for e in &entries {
        let ok = e.passed();
        println!("{:<20} max_rel {:.3e}  tol {:.0e}  {}", e.kind, e.report.max_rel, e.tolerance, if ok { "PASS" } else { "FAIL" });
        rows.push(vec![e.kind.to_string(), e.report.max_rel.to_string(), e.tolerance.to_string(), ok.to_string()]);
        if !ok {
            failed.push(e.kind);
        }
    }
    write_csv(&out.join("gradcheck.csv"), &["layer", "max_rel", "tolerance", "passed"], &rows)?;
    if failed.is_empty() {
        println!("all {} layer kinds pass", entries.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

/// CSV outputs the report knows how to summarize.
const REPORTED: [&str; 5] = ["metrics.csv", "oracle_metrics.csv", "history.csv", "gradcheck.csv", "disagreements.csv"];

fn markdown_table(header: &csv::StringRecord, rows: &[csv::StringRecord]) -> String {
    let line = |r: &csv::StringRecord| format!("| {} |\n", r.iter().collect::<Vec<_>>().join(" | "));
    let mut s = line(header);
    s += &format!("|{}\n", "---|".repeat(header.len()));
    rows.iter().for_each(|r| s += &line(r));
    s
}

fn cmd_report(a: &ReportArgs) -> Result<ExitCode> {
    ensure!(a.dir.is_dir(), "{} is not a directory", a.dir.display());
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&a.dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && REPORTED.iter().any(|n| e.file_name() == *n))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    let mut md = String::from("# Results\n");
    for path in &files {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = reader.headers()?.clone();
        let mut rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        let note = match name.as_ref() {
            "history.csv" => {
                let n = rows.len();
                rows = rows.split_off(n.saturating_sub(1));
                format!(" (final of {n} epochs)")
            }
            "disagreements.csv" => {
                let n = rows.len();
                rows.truncate(10);
                format!(" ({n} rows)")
            }
            _ => String::new(),
        };
        let rel = path.strip_prefix(&a.dir).unwrap_or(path);
        md += &format!("\n## {}{note}\n\n", rel.display());
        if !rows.is_empty() {
            md += &markdown_table(&header, &rows);
        }
    }
    let path = a.dir.join("report.md");
    crate::write_atomic(&path, |w| w.write_all(md.as_bytes()))?;
    print!("{md}");
    Ok(ExitCode::SUCCESS)
}
