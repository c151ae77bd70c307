use std::path::Path;

use proptest::prelude::*;
use shapeiq::checkpoint::{self, CheckpointError};
use shapeiq::dataset::{self, DatasetReader, Subset};
use shapeiq::image::{question_sheet, Image, SheetRow};
use shapeiq::manifest::{manifest_path, DatasetInfo};
use shapeiq_core::models::{build, train, Architecture, RecordSource, TrainConfig};
use shapeiq_core::nn::LrSchedule;
use shapeiq_core::qgen::{gen_dataset, DatasetConfig, QuestionFamily, Record, Scenario};

fn in_memory(config: &DatasetConfig) -> Vec<Record> {
    gen_dataset(config).unwrap().collect::<Result<_, _>>().unwrap()
}

fn write(dir: &Path, name: &str, config: &DatasetConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    let g = dataset::generate(&path, config, &mut |_, _| {}).unwrap();
    DatasetInfo { manifest: g.manifest, stats: g.stats, sha256: g.sha256, data: name.into() }
        .write(&manifest_path(&path))
        .unwrap();
    path
}

#[test]
fn generated_file_reads_back_as_the_in_memory_dataset() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in [Scenario::MultipleChoice, Scenario::Open] {
        let config = DatasetConfig::uniform(scenario, 12, 5);
        let path = write(dir.path(), &format!("{scenario}.pfq"), &config);
        let expected = in_memory(&config);
        let mut reader = DatasetReader::open(&path).unwrap();
        assert_eq!(reader.scenario(), scenario);
        assert_eq!(reader.len(), 12);
        let got: Vec<Record> = reader.iter().collect::<Result<_, _>>().unwrap();
        assert_eq!(got, expected);
        assert_eq!(reader.families().unwrap(), expected.iter().map(Record::family).collect::<Vec<_>>());
        // Random access in any order.
        assert_eq!(reader.read(7).unwrap(), expected[7]);
        assert_eq!(reader.read(2).unwrap(), expected[2]);
        assert!(reader.read(12).is_err());
        let mut again = reader.reopen().unwrap();
        assert_eq!(again.read(11).unwrap(), expected[11]);
    }
}

#[test]
fn written_records_match_file_size_and_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig::uniform(Scenario::Open, 5, 2);
    let path = write(dir.path(), "o.pfq", &config);
    let len = std::fs::metadata(&path).unwrap().len();
    assert_eq!(len, dataset::HEADER_LEN + 5 * dataset::record_len(Scenario::Open));
    let info = DatasetInfo::read(&manifest_path(&path)).unwrap();
    assert_eq!(info.sha256, shapeiq::sha256_file(&path).unwrap());
    assert_eq!(info.manifest.total(), 5);

    // The same records written through the generic writer give the same bytes.
    let other = dir.path().join("copy.pfq");
    let records = in_memory(&config);
    dataset::write_records(&other, records.iter()).unwrap();
    assert_eq!(std::fs::read(&other).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn manifest_stats_match_a_recount() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig::uniform(Scenario::MultipleChoice, 7, 9);
    let path = write(dir.path(), "m.pfq", &config);
    let info = DatasetInfo::read(&manifest_path(&path)).unwrap();
    // Independent two-pass mean / std over every stored byte.
    let bytes = std::fs::read(&path).unwrap();
    let body = &bytes[16..];
    let rl = dataset::record_len(Scenario::MultipleChoice) as usize;
    for c in 0..3 {
        let vals: Vec<f64> = body
            .chunks(rl)
            .flat_map(|r| r[2..].iter().skip(c).step_by(3).map(|&b| b as f64 / 255.0))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((info.stats.mean[c] as f64 - mean).abs() < 1e-6, "channel {c}");
        assert!((info.stats.std[c] as f64 - var.sqrt()).abs() < 1e-6, "channel {c}");
    }
}

#[test]
fn subset_reads_through_to_the_source() {
    let mut records = in_memory(&DatasetConfig::uniform(Scenario::MultipleChoice, 7, 1));
    let expected = records[5].clone();
    let mut s = Subset::new(&mut records, vec![5, 0]);
    assert_eq!(s.len(), 2);
    assert_eq!(s.get(0).unwrap(), expected);
    assert!(s.get(2).is_err());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig::uniform(Scenario::MultipleChoice, 8, 4);
    let mut stream = gen_dataset(&config).unwrap();
    let mut data: Vec<Record> = stream.by_ref().collect::<Result<_, _>>().unwrap();
    let stats = stream.stats().unwrap();
    let mut model = build(Architecture::classifier([2, 2, 4, 4]), 1).unwrap();
    let tc = TrainConfig { batch_size: 4, epochs: 1, schedule: LrSchedule::new(1e-3), ..TrainConfig::default() };
    let (adam, _) = train(&mut model, &mut data, None, &stats, &tc, None, &mut |_| {}).unwrap();
    let ck = model.checkpoint(Some((&adam.config, &adam.state)), stats, 1);

    let a = dir.path().join("a.pfck");
    let b = dir.path().join("b.pfck");
    checkpoint::save(&a, &ck).unwrap();
    let (mut loaded, back) = checkpoint::load_model(&a).unwrap();
    assert_eq!(back, ck);
    checkpoint::save(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // The reloaded network predicts exactly like the original.
    let Record::MultipleChoice(q) = &data[0] else { panic!() };
    assert_eq!(loaded.predict_choice(q, &stats).unwrap(), model.predict_choice(q, &stats).unwrap());
}

#[test]
fn checkpoint_errors_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.pfck");
    std::fs::write(&p, b"nope").unwrap();
    assert!(matches!(checkpoint::load(&p), Err(CheckpointError::Magic)));
    assert!(matches!(checkpoint::load(&dir.path().join("missing")), Err(CheckpointError::Io(_))));
}

#[test]
fn contact_sheet_places_frames_in_cells() {
    let records = in_memory(&DatasetConfig::with_families(Scenario::MultipleChoice, &[QuestionFamily::Size], 2, 3));
    let sheet = question_sheet(&records.iter().cloned().map(SheetRow::plain).collect::<Vec<_>>());
    let png = Image::decode_png(&sheet.encode_png().unwrap()).unwrap();
    assert_eq!(png, sheet);
    // Second context frame of the first question: cell 1 starts at x = 4 + 72.
    let Record::MultipleChoice(q) = &records[0] else { panic!() };
    for (x, y) in [(0, 0), (31, 40), (63, 63)] {
        assert_eq!(sheet.pixel(76 + x, 8 + y), q.context[1].pixel(x, y));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn any_small_dataset_round_trips(seed in 0u64..1_000, total in 1usize..5, open in any::<bool>()) {
        let scenario = if open { Scenario::Open } else { Scenario::MultipleChoice };
        let config = DatasetConfig::uniform(scenario, total, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pfq");
        let records = in_memory(&config);
        dataset::write_records(&path, records.iter()).unwrap();
        let mut r = DatasetReader::open(&path).unwrap();
        prop_assert_eq!(r.scenario(), scenario);
        let back: Vec<Record> = r.iter().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn corrupted_headers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.pfq");
        std::fs::write(&path, &bytes).unwrap();
        let _ = DatasetReader::open(&path);
        let _ = checkpoint::decode(&bytes);
    }
}
