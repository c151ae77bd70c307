use std::path::Path;
use std::process::{Command, Output};

use shapeiq::dataset::DatasetReader;
use shapeiq::kv::KvFile;
use shapeiq::manifest::DatasetInfo;
use shapeiq_core::qgen::QuestionFamily;

fn shapeiq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapeiq"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHAPEIQ_OUT_DIR")
        .output()
        .expect("run shapeiq")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = shapeiq(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn generate_is_uniform_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--scenario", "mc", "--total", "70", "--seed", "1", "--name", "a", "--sheet-rows", "2"]);
    ok(d, &["generate", "--scenario", "mc", "--total", "70", "--seed", "1", "--name", "b", "--sheet-rows", "2"]);
    let a = DatasetInfo::read(&d.join("out/a.manifest")).unwrap();
    let b = DatasetInfo::read(&d.join("out/b.manifest")).unwrap();
    assert_eq!(a.manifest.counts, [10; 7]);
    assert_eq!(a.sha256, b.sha256);
    assert_eq!(std::fs::read(d.join("out/a.pfq")).unwrap(), std::fs::read(d.join("out/b.pfq")).unwrap());
    for f in QuestionFamily::ALL {
        assert!(d.join(format!("out/sheets/a_{f}.png")).exists());
    }
    ok(d, &["generate", "--total", "70", "--seed", "2", "--name", "c", "--sheet-rows", "0"]);
    assert_ne!(DatasetInfo::read(&d.join("out/c.manifest")).unwrap().sha256, a.sha256);
}

#[test]
fn snapshot_reproduces_the_run_and_flags_beat_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--scenario", "open", "--total", "10", "--seed", "8", "--family", "size,color", "--noise-sigma", "20", "--name", "x", "--out", "one"]);
    let snap = d.join("one/x.generate.config");
    let kv = KvFile::read(&snap).unwrap();
    assert_eq!(kv.get("family"), Some("size,color"));
    assert_eq!(kv.get("noise-sigma"), Some("20"));
    ok(d, &["generate", "--config", snap.to_str().unwrap(), "--out", "two"]);
    let one = DatasetInfo::read(&d.join("one/x.manifest")).unwrap();
    let two = DatasetInfo::read(&d.join("two/x.manifest")).unwrap();
    assert_eq!(one.sha256, two.sha256);
    assert_eq!(one.manifest.noise_sigma8, 20.0);

    // An explicit flag overrides the file; the snapshot records the merge.
    ok(d, &["generate", "--config", snap.to_str().unwrap(), "--seed", "9", "--out", "three"]);
    let three = KvFile::read(&d.join("three/x.generate.config")).unwrap();
    assert_eq!(three.get("seed"), Some("9"));
    assert_eq!(three.get("total"), Some("10"));
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_shapeiq"))
        .args(["generate", "--total", "7", "--name", "e", "--sheet-rows", "0"])
        .current_dir(dir.path())
        .env("SHAPEIQ_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/e.pfq").exists());
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = shapeiq(d, &["solve", "--data", "nowhere.pfq"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere.pfq"));

    ok(d, &["generate", "--scenario", "open", "--total", "5", "--name", "o", "--sheet-rows", "0"]);
    let mismatch = shapeiq(d, &["train", "--model", "classifier", "--data", "out/o.pfq"]);
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("multiple_choice"));

    let bad = shapeiq(d, &["generate", "--scenario", "open", "--family", "number"]);
    assert!(!bad.status.success());
    let typo = shapeiq(d, &["generate", "--family", "sise"]);
    assert!(!typo.status.success());
}

#[test]
fn solve_agrees_with_labels_and_leaves_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--total", "14", "--seed", "4", "--name", "s", "--sheet-rows", "0"]);
    let before = std::fs::read(d.join("out/s.pfq")).unwrap();
    ok(d, &["solve", "--data", "out/s.pfq", "--out", "solved"]);
    assert_eq!(std::fs::read(d.join("out/s.pfq")).unwrap(), before);
    let rows = csv_rows(&d.join("solved/oracle_metrics.csv"));
    assert_eq!(rows[0], ["family", "count", "correct", "accuracy"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    let mut expected: Vec<&str> = QuestionFamily::ALL.iter().map(|f| f.name()).collect();
    expected.push("overall");
    assert_eq!(names, expected);
    assert_eq!(rows.last().unwrap()[3], "1");
    assert_eq!(csv_rows(&d.join("solved/disagreements.csv")).len(), 1);
}

#[test]
fn train_eval_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--total", "21", "--seed", "5", "--name", "t", "--sheet-rows", "0"]);
    let train = |out: &str| {
        ok(d, &["train", "--model", "classifier", "--data", "out/t.pfq", "--epochs", "2", "--batch-size", "8", "--widths", "2,2,4,4", "--out", out]);
        ok(d, &["eval", "--checkpoint", &format!("{out}/model.pfck"), "--data", "out/t.pfq", "--out", out]);
    };
    train("r1");
    train("r2");
    for f in ["history.csv", "metrics.csv", "probabilities.csv", "model.pfck"] {
        assert_eq!(std::fs::read(d.join("r1").join(f)).unwrap(), std::fs::read(d.join("r2").join(f)).unwrap(), "{f}");
    }
    let history = csv_rows(&d.join("r1/history.csv"));
    assert_eq!(history[0], ["epoch", "lr", "train_loss", "val_loss", "val_accuracy"]);
    assert_eq!(history.len(), 3);
    let metrics = csv_rows(&d.join("r1/metrics.csv"));
    assert_eq!(metrics.len(), 1 + 7 + 1);
    let probs = csv_rows(&d.join("r1/probabilities.csv"));
    assert_eq!(probs[0][4..], ["p0", "p1", "p2", "p3"]);
    for row in &probs[1..] {
        let s: f64 = row[4..].iter().map(|p| p.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    assert!(d.join("r1/misclassified.png").exists());
    assert!(d.join("r1/train.config").exists());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--scenario", "open", "--total", "11", "--seed", "6", "--name", "o", "--sheet-rows", "0"]);
    let common = ["train", "--model", "autoencoder", "--data", "out/o.pfq", "--batch-size", "4", "--widths", "2,2,2,2"];
    let run = |extra: &[&str]| ok(d, &[&common[..], extra].concat());
    run(&["--epochs", "3", "--out", "whole"]);
    run(&["--epochs", "1", "--out", "split"]);
    run(&["--epochs", "3", "--out", "split", "--resume", "split/model.pfck"]);
    for f in ["history.csv", "model.pfck"] {
        assert_eq!(std::fs::read(d.join("whole").join(f)).unwrap(), std::fs::read(d.join("split").join(f)).unwrap(), "{f}");
    }
    assert_eq!(csv_rows(&d.join("whole/history.csv"))[0][4], "val_mse");

    ok(d, &["eval", "--checkpoint", "whole/model.pfck", "--data", "out/o.pfq", "--out", "ev", "--sheet-rows", "3"]);
    let metrics = csv_rows(&d.join("ev/metrics.csv"));
    assert_eq!(metrics[0], ["family", "count", "mse"]);
    assert_eq!(metrics.len(), 1 + 5 + 1);
    assert!(d.join("ev/predictions.png").exists());
}

#[test]
fn learning_rate_drops_tenfold_after_epoch_100() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--total", "2", "--seed", "7", "--name", "l", "--sheet-rows", "0"]);
    ok(d, &["train", "--model", "classifier", "--data", "out/l.pfq", "--epochs", "101", "--batch-size", "2", "--holdout", "0", "--widths", "1,1,1,1", "--lr", "0.001"]);
    let h = csv_rows(&d.join("out/history.csv"));
    assert_eq!(h.len(), 102);
    assert_eq!(h[100][1], "0.001");
    assert_eq!(h[101][1], "0.0001");
}

#[test]
fn gradcheck_passes_and_flags_a_skewed_conv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(d, &["gradcheck"]);
    for kind in ["conv ", "deconv", "batchnorm", "linear", "cross_entropy", "mse"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(kind)).count(), 1, "{kind}");
    }
    let bad = shapeiq(d, &["gradcheck", "--skew-conv", "1.1", "--out", "bad"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("conv"));
}

#[test]
fn render_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--total", "3", "--name", "r", "--sheet-rows", "0"]);
    ok(d, &["render", "--data", "out/r.pfq", "--index", "1", "--count", "5", "--frames", "2", "--out", "img"]);
    assert!(d.join("img/questions_1-2.png").exists());
    assert!(d.join("img/q2_f6.png").exists());
    let mut reader = DatasetReader::open(&d.join("out/r.pfq")).unwrap();
    let rec = reader.read(2).unwrap();
    let img = shapeiq::image::Image::decode_png(&std::fs::read(d.join("img/q2_f0.png")).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (128, 128));
    assert_eq!(img.pixel(9, 9), rec.frames()[0].pixel(4, 4));

    ok(d, &["solve", "--data", "out/r.pfq", "--out", "out/solve"]);
    let report = ok(d, &["report", "--dir", "out"]);
    assert!(report.contains("solve/oracle_metrics.csv"));
    assert!(d.join("out/report.md").exists());
}
