//! Acceptance run: one PASS / FAIL / SKIP line per criterion.
//!
//! Criteria 1–4 train desk-scale models (20K training questions, 1K test,
//! 30 epochs; hours on one core) and run only with
//! `SHAPEIQ_ACCEPTANCE_FULL=1`. Their datasets and checkpoints live under
//! `SHAPEIQ_ACCEPTANCE_DIR` (default: the target tmp dir) and are reused,
//! so an interrupted run picks up where it stopped.
//!
//! Failures are reported, not raised: the process exits 0 unless
//! `SHAPEIQ_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapeiq::checkpoint;
use shapeiq::dataset::{self, DatasetReader};
use shapeiq::manifest::DatasetInfo;
use shapeiq_core::geometry::angle_distance;
use shapeiq_core::models::{build, train, Architecture, TrainConfig};
use shapeiq_core::nn::{conv2d, deconv2d, gradcheck_suite, softmax, LrSchedule, Tensor};
use shapeiq_core::oracle::{context_frames, fit_sequence, solve, FitParams};
use shapeiq_core::qgen::{gen_dataset, gen_question, DatasetConfig, QuestionFamily, QuestionParams, Record, Scenario};
use statrs::distribution::{Binomial, DiscreteCDF};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Outcome = Result<Verdict, String>;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- helpers

const DESK_TRAIN: usize = 20_000;
const DESK_TEST: usize = 1_000;
const DESK_EPOCHS: u32 = 30;
const NOISE_SIGMA: &str = "99";

fn shapeiq(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shapeiq"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHAPEIQ_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("shapeiq {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn work_dir() -> PathBuf {
    std::env::var_os("SHAPEIQ_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

/// `work/data/<name>.pfq`, generated unless a complete copy exists.
fn dataset(work: &Path, name: &str, args: &[&str]) -> Result<PathBuf, String> {
    let path = work.join("data").join(format!("{name}.pfq"));
    if DatasetInfo::read(&path.with_extension("manifest")).is_ok() && path.exists() {
        return Ok(path);
    }
    let mut full = vec!["generate", "--name", name, "--sheet-rows", "4", "--out"];
    let out = work.join("data");
    let out = out.to_str().ok_or("non-UTF-8 path")?;
    full.push(out);
    full.extend_from_slice(args);
    eprintln!("  generating {name}");
    shapeiq(work, &full)?;
    Ok(path)
}

/// Trains into `work/runs/<name>` up to the desk epoch count, resuming a
/// partial checkpoint, then evaluates on `test`. Returns metrics.csv rows
/// keyed by family (plus `overall`).
fn trained_metrics(work: &Path, name: &str, model: &str, train_set: &Path, test: &Path, extra: &[&str]) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let run = work.join("runs").join(name);
    let ck = run.join("model.pfck");
    let epochs = DESK_EPOCHS.to_string();
    let (run_s, ck_s) = (run.to_str().unwrap(), ck.to_str().unwrap());
    let done = checkpoint::load(&ck).map(|c| c.epoch).unwrap_or(0);
    if done < DESK_EPOCHS {
        let mut args = vec!["train", "--model", model, "--data", train_set.to_str().unwrap(), "--epochs", &epochs, "--out", run_s];
        if done > 0 {
            args.extend(["--resume", ck_s]);
        }
        args.extend_from_slice(extra);
        eprintln!("  training {name} from epoch {done}");
        let started = Instant::now();
        shapeiq(work, &args)?;
        eprintln!("  trained {name} in {:.0} min", started.elapsed().as_secs_f64() / 60.0);
    }
    let eval = run.join("eval");
    shapeiq(work, &["eval", "--checkpoint", ck_s, "--data", test.to_str().unwrap(), "--out", eval.to_str().unwrap()])?;
    let mut rows = BTreeMap::new();
    let mut reader = csv::Reader::from_path(eval.join("metrics.csv")).map_err(|e| e.to_string())?;
    for r in reader.records() {
        let r = r.map_err(|e| e.to_string())?;
        let vals = r.iter().skip(1).map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect();
        rows.insert(r[0].to_string(), vals);
    }
    Ok(rows)
}

/// metrics.csv columns after the family name.
const COUNT: usize = 0;
const CORRECT: usize = 1;
const ACCURACY: usize = 2;
const MSE: usize = 1;

fn full_enabled() -> bool {
    std::env::var("SHAPEIQ_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

fn skip_full() -> Outcome {
    Ok(Verdict::Skip("desk-scale training; set SHAPEIQ_ACCEPTANCE_FULL=1".into()))
}

// --------------------------------------------------------------- criteria

const PER_FAMILY: [(QuestionFamily, f64); 7] = [
    (QuestionFamily::Size, 0.95),
    (QuestionFamily::Reflection, 0.95),
    (QuestionFamily::Addition, 0.95),
    (QuestionFamily::RotationPolygon, 0.90),
    (QuestionFamily::RotationSquiggle, 0.85),
    (QuestionFamily::Color, 0.88),
    (QuestionFamily::Number, 0.82),
];

fn c1_per_family_classifiers(work: &Path) -> Outcome {
    if !full_enabled() {
        return skip_full();
    }
    let (mut parts, mut ok) = (Vec::new(), true);
    for (k, (family, min)) in PER_FAMILY.iter().enumerate() {
        let f = family.name();
        let seed_train = (1100 + k).to_string();
        let seed_test = (2100 + k).to_string();
        let total_train = DESK_TRAIN.to_string();
        let total_test = DESK_TEST.to_string();
        let tr = dataset(work, &format!("{f}_train"), &["--family", f, "--total", &total_train, "--seed", &seed_train])?;
        let te = dataset(work, &format!("{f}_test"), &["--family", f, "--total", &total_test, "--seed", &seed_test])?;
        let m = trained_metrics(work, &format!("classifier_{f}"), "classifier", &tr, &te, &[])?;
        let acc = m["overall"][ACCURACY];
        ok &= acc >= *min;
        parts.push(format!("{f} {acc:.3}{}{min}", if acc >= *min { "≥" } else { "<" }));
    }
    Ok(verdict(ok, parts.join(", ")))
}

fn all_family_run(work: &Path, noisy: bool) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let (tag, noise): (&str, &[&str]) = if noisy { ("noisy", &["--noise-sigma", NOISE_SIGMA]) } else { ("clean", &[]) };
    let total_train = DESK_TRAIN.to_string();
    let total_test = DESK_TEST.to_string();
    let tr = dataset(work, &format!("all_{tag}_train"), &[&["--total", total_train.as_str(), "--seed", "1000"][..], noise].concat())?;
    let te = dataset(work, &format!("all_{tag}_test"), &[&["--total", total_test.as_str(), "--seed", "2000"][..], noise].concat())?;
    trained_metrics(work, &format!("classifier_all_{tag}"), "classifier", &tr, &te, &[])
}

fn c2_all_family_classifier(work: &Path) -> Outcome {
    if !full_enabled() {
        return skip_full();
    }
    let m = all_family_run(work, false)?;
    let o = &m["overall"];
    let (n, k, acc) = (o[COUNT] as u64, o[CORRECT] as u64, o[ACCURACY]);
    let binom = Binomial::new(0.25, n).map_err(|e| e.to_string())?;
    // P(X ≥ k) under guessing.
    let p = if k == 0 { 1.0 } else { binom.sf(k - 1) };
    Ok(verdict(acc >= 0.80 && p < 1e-6, format!("accuracy {acc:.4} (≥0.80), chance p = {p:.2e} (<1e-6), n = {n}")))
}

fn c3_autoencoder(work: &Path) -> Outcome {
    if !full_enabled() {
        return skip_full();
    }
    let total_train = DESK_TRAIN.to_string();
    let total_test = DESK_TEST.to_string();
    let tr = dataset(work, "open_train", &["--scenario", "open", "--total", &total_train, "--seed", "3000"])?;
    let te = dataset(work, "open_test", &["--scenario", "open", "--total", &total_test, "--seed", "4000"])?;
    let m = trained_metrics(work, "autoencoder", "autoencoder", &tr, &te, &[])?;
    let mse = |f: &str| m[f][MSE];
    let overall = mse("overall");
    let size_lt_rot = mse("size") < mse("rotation_polygon");
    let color_lt_refl = mse("color") < mse("reflection");
    Ok(verdict(
        overall <= 5e-3 && size_lt_rot && color_lt_refl,
        format!(
            "overall {overall:.2e} (≤5e-3); size {:.2e} < rotation_polygon {:.2e}: {size_lt_rot}; color {:.2e} < reflection {:.2e}: {color_lt_refl}",
            mse("size"),
            mse("rotation_polygon"),
            mse("color"),
            mse("reflection")
        ),
    ))
}

fn c4_noise(work: &Path) -> Outcome {
    if !full_enabled() {
        return skip_full();
    }
    let clean = all_family_run(work, false)?["overall"][ACCURACY];
    let noisy = all_family_run(work, true)?["overall"][ACCURACY];
    let drop = clean - noisy;
    Ok(verdict(drop <= 0.10, format!("clean {clean:.4}, σ={NOISE_SIGMA} {noisy:.4}, drop {:.1} points (≤10)", drop * 100.0)))
}

fn c5_oracle() -> Outcome {
    // Accuracy and label agreement over a 1000-question clean corpus.
    let records: Vec<Record> =
        gen_dataset(&DatasetConfig::uniform(Scenario::MultipleChoice, 1000, 5000)).map_err(|e| e.to_string())?.collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut tally: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for r in &records {
        let Record::MultipleChoice(q) = r else { unreachable!() };
        let t = tally.entry(q.family.code()).or_default();
        t.0 += usize::from(solve(q).index == q.answer_index as usize);
        t.1 += 1;
    }
    let disagreements: usize = tally.values().map(|(c, n)| n - c).sum();
    let (worst_code, worst) = tally.iter().map(|(&f, &(c, n))| (f, c as f64 / n as f64)).fold((0, 1.0), |a, b| if b.1 < a.1 { b } else { a });
    let worst_family = QuestionFamily::from_code(worst_code).unwrap();

    // Parameter recovery against the generating parameters.
    const PER: usize = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(5001);
    let (mut within, mut total) = (0usize, 0usize);
    let mut per_family = Vec::new();
    for family in [QuestionFamily::RotationPolygon, QuestionFamily::RotationSquiggle, QuestionFamily::Reflection, QuestionFamily::Size] {
        let mut good = 0;
        for _ in 0..PER {
            let g = gen_question(family, &mut rng).map_err(|e| e.to_string())?;
            // Context plus the option the oracle picked: the whole sequence.
            let q = &g.question;
            let mut frames = context_frames(q).to_vec();
            frames.push(q.options[solve(q).index].clone());
            let h = fit_sequence(family, &frames);
            let ok = match (&g.params, h.params) {
                (QuestionParams::Rotation { theta, .. }, FitParams::Rotation { theta: t })
                | (QuestionParams::Reflection { theta, .. }, FitParams::Reflection { theta: t }) => {
                    angle_distance(*theta, t).to_degrees() <= 1.0
                }
                (QuestionParams::Size { mu, .. }, FitParams::Size { mu: m }) => (mu - m).abs() <= 0.05,
                _ => false,
            };
            good += usize::from(ok);
        }
        within += good;
        total += PER;
        per_family.push(format!("{family} {:.1}%", 100.0 * good as f64 / PER as f64));
    }
    let recovery = within as f64 / total as f64;
    Ok(verdict(
        worst >= 0.99 && disagreements == 0 && recovery >= 0.98,
        format!(
            "min family accuracy {worst:.3} ({worst_family}, ≥0.99); {disagreements} label disagreements (0); parameter recovery {:.1}% (≥98%: {})",
            recovery * 100.0,
            per_family.join(", ")
        ),
    ))
}

/// Direct six-loop convolution, the reference for `conv2d`.
fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f32> {
    let [n, ci, h, wd] = x.shape().try_into().unwrap();
    let [co, _, k, _] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let (xd, wdt) = (x.data(), w.data());
    let mut out = vec![0.0f32; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = ((oy * stride + ky) as isize - pad as isize, (ox * stride + kx) as isize - pad as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((b * ci + c) * h + iy as usize) * wd + ix as usize];
                                acc += xv as f64 * wdt[((o * ci + c) * k + ky) * k + kx] as f64;
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

fn c6_numeric_core() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let suite = gradcheck_suite(&mut rng, 1.0).map_err(|e| e.to_string())?;
    let failed: Vec<&str> = suite.iter().filter(|e| !e.passed()).map(|e| e.kind).collect();

    let mut conv_diff = 0.0f32;
    let mut shapes = 0;
    for n in [1, 2] {
        for ci in [1, 2, 3] {
            for co in [1, 2] {
                for h in [4, 5, 7, 8] {
                    for stride in [1, 2] {
                        for pad in [0, 1, 2] {
                            let x = Tensor::randn(&[n, ci, h, h + 1], 1.0, &mut rng);
                            let w = Tensor::randn(&[co, ci, 4, 4], 1.0, &mut rng);
                            let got = conv2d(&x, &w, None, stride, pad).map_err(|e| e.to_string())?;
                            let want = naive_conv(&x, &w, stride, pad);
                            conv_diff = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(conv_diff, f32::max);
                            shapes += 1;
                        }
                    }
                }
            }
        }
    }

    // ⟨conv(x; W), y⟩ = ⟨x, deconv(y; W)⟩ for W of shape [A, B, k, k].
    let mut adjoint = 0.0f64;
    for (a, b, h, stride, pad) in [(2, 3, 5, 2, 1), (3, 1, 4, 1, 0), (4, 2, 8, 2, 1), (1, 1, 1, 1, 0)] {
        let w = Tensor::randn(&[a, b, 4, 4], 1.0, &mut rng);
        let big = (h - 1) * stride + 4 - 2 * pad;
        let x = Tensor::randn(&[2, b, big, big], 1.0, &mut rng);
        let y = Tensor::randn(&[2, a, h, h], 1.0, &mut rng);
        let lhs = conv2d(&x, &w, None, stride, pad).map_err(|e| e.to_string())?.dot(&y);
        let rhs = x.dot(&deconv2d(&y, &w, None, stride, pad).map_err(|e| e.to_string())?);
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }

    let p = softmax(&Tensor::full(&[3, 4], 0.7)).map_err(|e| e.to_string())?;
    let quarter = p.data().iter().map(|v| (v - 0.25).abs()).fold(0.0f32, f32::max);

    let base = 2e-4;
    let s = LrSchedule::new(base);
    let lr_ok = s.at(0) == base && s.at(100) == base / 10.0 && s.at(250) == base / 100.0;

    Ok(verdict(
        failed.is_empty() && conv_diff < 1e-5 && adjoint < 1e-4 && quarter <= 1e-6 && lr_ok,
        format!(
            "gradcheck {}/{} kinds pass{}; conv vs naive max |Δ| {conv_diff:.1e} over {shapes} shapes (<1e-5); deconv adjoint rel {adjoint:.1e} (<1e-4); softmax |p−¼| {quarter:.0e} (≤1e-6); lr at 0/100/250 exact: {lr_ok}",
            suite.len() - failed.len(),
            suite.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) }
        ),
    ))
}

fn c7_reproducibility(scratch: &Path) -> Outcome {
    let d = scratch.join("repro");
    std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
    let mut sums = Vec::new();
    for name in ["a", "b"] {
        shapeiq(&d, &["generate", "--total", "42", "--seed", "7000", "--name", name, "--sheet-rows", "0"])?;
        sums.push(shapeiq::sha256_file(&d.join(format!("out/{name}.pfq"))).map_err(|e| e.to_string())?);
    }
    let mut metrics = Vec::new();
    for run in ["r1", "r2"] {
        shapeiq(&d, &["train", "--model", "classifier", "--data", "out/a.pfq", "--epochs", "2", "--batch-size", "8", "--widths", "4,4,8,8", "--seed", "7", "--out", run])?;
        shapeiq(&d, &["eval", "--checkpoint", &format!("{run}/model.pfck"), "--data", "out/b.pfq", "--out", run])?;
        metrics.push(std::fs::read(d.join(run).join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    let same_data = sums[0] == sums[1];
    let same_metrics = metrics[0] == metrics[1];
    Ok(verdict(same_data && same_metrics, format!("dataset checksums equal: {same_data}; final evaluation metrics equal: {same_metrics}")))
}

fn c8_round_trips(scratch: &Path) -> Outcome {
    let d = scratch.join("formats");
    std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
    let mut equal = true;
    for (scenario, n) in [(Scenario::MultipleChoice, 21), (Scenario::Open, 10)] {
        let config = DatasetConfig::uniform(scenario, n, 8000);
        let expected: Vec<Record> = gen_dataset(&config).map_err(|e| e.to_string())?.collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let path = d.join(format!("{scenario}.pfq"));
        dataset::write_records(&path, expected.iter()).map_err(|e| e.to_string())?;
        let back: Vec<Record> = DatasetReader::open(&path).map_err(|e| e.to_string())?.iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        equal &= back == expected;
    }

    let mut identical = true;
    for (arch, scenario) in [(Architecture::classifier([4, 4, 8, 8]), Scenario::MultipleChoice), (Architecture::autoencoder([4, 4, 8, 8]), Scenario::Open)] {
        let mut stream = gen_dataset(&DatasetConfig::uniform(scenario, 10, 8001)).map_err(|e| e.to_string())?;
        let mut data: Vec<Record> = stream.by_ref().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let stats = stream.stats().ok_or("constant channel")?;
        let mut model = build(arch, 1).map_err(|e| e.to_string())?;
        let tc = TrainConfig { batch_size: 5, epochs: 1, ..TrainConfig::default() };
        let (adam, _) = train(&mut model, &mut data, None, &stats, &tc, None, &mut |_| {}).map_err(|e| e.to_string())?;
        let (a, b) = (d.join("a.pfck"), d.join("b.pfck"));
        checkpoint::save(&a, &model.checkpoint(Some((&adam.config, &adam.state)), stats, 1)).map_err(|e| e.to_string())?;
        let loaded = checkpoint::load(&a).map_err(|e| e.to_string())?;
        checkpoint::save(&b, &loaded).map_err(|e| e.to_string())?;
        identical &= std::fs::read(&a).map_err(|e| e.to_string())? == std::fs::read(&b).map_err(|e| e.to_string())?;
    }
    Ok(verdict(equal && identical, format!("dataset write→read equal: {equal}; checkpoint save→load→save byte-identical: {identical}")))
}

fn main() {
    let work = work_dir();
    let scratch = tempfile::tempdir().expect("scratch dir");
    std::fs::create_dir_all(&work).expect("work dir");
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 8] = [
        ("per-family classifier accuracy", Box::new(|| c1_per_family_classifiers(&work))),
        ("all-family classifier accuracy", Box::new(|| c2_all_family_classifier(&work))),
        ("autoencoder MSE", Box::new(|| c3_autoencoder(&work))),
        ("noise robustness", Box::new(|| c4_noise(&work))),
        ("oracle suite", Box::new(c5_oracle)),
        ("numeric core", Box::new(c6_numeric_core)),
        ("reproducibility", Box::new(|| c7_reproducibility(scratch.path()))),
        ("format round-trips", Box::new(|| c8_round_trips(scratch.path()))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (tag, detail) = match run() {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Fail(d)) => ("FAIL", d),
            Ok(Verdict::Skip(d)) => ("SKIP", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        failures += usize::from(tag == "FAIL");
        println!("criterion {} {tag} {name}: {detail} [{:.1}s]", i + 1, started.elapsed().as_secs_f64());
    }
    if failures > 0 && std::env::var("SHAPEIQ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
