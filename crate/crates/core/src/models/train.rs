//! Minibatch training and evaluation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, classifier_input, stack_frames, Model, ModelError, ModelKind, RecordSource, AUTOENCODER_CHANNELS,
    CLASSIFIER_CHANNELS, FRAME,
};
use crate::geometry::CANVAS_SIZE;
use crate::nn::{mse, softmax, softmax_cross_entropy, Adam, AdamConfig, LrSchedule, Mode, Tensor};
use crate::qgen::{NormalizationStats, QuestionFamily, Record};

pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Present the options of every multiple-choice question in a fresh
    /// random order.
    pub shuffle_options: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            epochs: 30,
            schedule: LrSchedule::new(2e-4),
            adam: AdamConfig::default(),
            seed: 0,
            shuffle_options: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Classifier only.
    pub val_accuracy: Option<f64>,
    /// Autoencoder only, in `[0, 1]` intensity space.
    pub val_mse: Option<f64>,
}

/// A prepared minibatch.
struct Batch {
    x: Tensor,
    labels: Vec<usize>,
    targets: Option<Tensor>,
    families: Vec<QuestionFamily>,
}

fn assemble(
    kind: ModelKind,
    source: &mut dyn RecordSource,
    indices: &[usize],
    stats: &NormalizationStats,
    mut order: impl FnMut() -> [usize; 4],
) -> Result<Batch, ModelError> {
    let n = indices.len();
    let (channels, side) = match kind {
        ModelKind::Classifier => (CLASSIFIER_CHANNELS, CANVAS_SIZE),
        ModelKind::Autoencoder => (AUTOENCODER_CHANNELS, CANVAS_SIZE),
    };
    let per = channels * side * side;
    let mut x = Tensor::zeros(&[n, channels, side, side]);
    let mut targets = (kind == ModelKind::Autoencoder).then(|| Tensor::zeros(&[n, 3, side, side]));
    let mut labels = Vec::with_capacity(n);
    let mut families = Vec::with_capacity(n);
    for (s, &i) in indices.iter().enumerate() {
        let record = source.get(i)?;
        families.push(record.family());
        let dst = &mut x.data_mut()[s * per..(s + 1) * per];
        match (kind, record) {
            (ModelKind::Classifier, Record::MultipleChoice(q)) => {
                let order = order();
                classifier_input(&q, &order, stats, dst);
                let label = order.iter().position(|&o| o == q.answer_index as usize).expect("permutation");
                labels.push(label);
            }
            (ModelKind::Autoencoder, Record::Open(q)) => {
                stack_frames(&[&q.context[0], &q.context[1]], stats, dst);
                let t = targets.as_mut().expect("autoencoder batch");
                stack_frames(&[&q.target], stats, &mut t.data_mut()[s * FRAME..(s + 1) * FRAME]);
            }
            (kind, record) => {
                return Err(ModelError::Scenario { model: kind, expected: kind.scenario(), got: record.scenario() })
            }
        }
    }
    Ok(Batch { x, labels, targets, families })
}

fn loss_and_grad(kind: ModelKind, out: &Tensor, batch: &Batch) -> Result<(f64, Tensor), ModelError> {
    Ok(match kind {
        ModelKind::Classifier => softmax_cross_entropy(out, &batch.labels)?,
        ModelKind::Autoencoder => mse(out, batch.targets.as_ref().expect("targets"))?,
    })
}

const IDENTITY_ORDER: [usize; 4] = [0, 1, 2, 3];

/// Evaluation-mode summary of a dataset: mean loss, plus accuracy for the
/// classifier or intensity-space MSE for the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
}

/// MSE between two normalized frames after mapping both back to `[0, 1]`
/// intensities (clamped).
pub fn intensity_mse(pred: &[f32], target: &[f32], stats: &NormalizationStats) -> f64 {
    let plane = CANVAS_SIZE * CANVAS_SIZE;
    let mut sum = 0.0f64;
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let c = i / plane;
        let back = |v: f32| ((v * stats.std[c] + stats.mean[c]) as f64).clamp(0.0, 1.0);
        let d = back(p) - back(t);
        sum += d * d;
    }
    sum / pred.len().max(1) as f64
}

pub fn mean_loss(
    model: &mut Model,
    source: &mut dyn RecordSource,
    stats: &NormalizationStats,
    batch_size: usize,
) -> Result<LossSummary, ModelError> {
    let kind = model.kind();
    let n = source.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let (mut loss, mut correct, mut mse_sum) = (0.0f64, 0usize, 0.0f64);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = assemble(kind, source, chunk, stats, || IDENTITY_ORDER)?;
        let out = model.net.forward(&batch.x, Mode::Eval)?;
        let (l, _) = loss_and_grad(kind, &out, &batch)?;
        loss += l * chunk.len() as f64;
        match kind {
            ModelKind::Classifier => {
                correct += out.data().chunks(4).zip(&batch.labels).filter(|(row, &l)| argmax(row) == l).count();
            }
            ModelKind::Autoencoder => {
                let t = batch.targets.as_ref().expect("targets");
                for (p, t) in out.data().chunks(FRAME).zip(t.data().chunks(FRAME)) {
                    mse_sum += intensity_mse(p, t, stats);
                }
            }
        }
    }
    let classifier = kind == ModelKind::Classifier;
    Ok(LossSummary {
        loss: loss / n as f64,
        accuracy: classifier.then(|| correct as f64 / n as f64),
        mse: (!classifier).then(|| mse_sum / n as f64),
    })
}

/// Trains for `config.epochs` epochs, continuing from `adam` if given.
/// Batches of a single sample are skipped because batch normalization
/// needs two. `on_epoch` sees each record as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &mut dyn RecordSource,
    mut val_set: Option<&mut dyn RecordSource>,
    stats: &NormalizationStats,
    config: &TrainConfig,
    adam: Option<Adam>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Adam, Vec<EpochRecord>), ModelError> {
    let kind = model.kind();
    let n = train_set.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = adam.unwrap_or_else(|| Adam::new(config.adam));
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let bs = config.batch_size.max(1);
    // Optimizer steps per epoch; a trailing single-sample batch is skipped.
    let steps = n / bs + usize::from(n % bs >= 2);
    let start = adam.state.step as usize / steps.max(1);
    for epoch in start..start + config.epochs {
        let lr = config.schedule.at(epoch);
        // One stream per epoch, so a resumed run shuffles exactly as an
        // uninterrupted one would.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = assemble(kind, train_set, chunk, stats, || {
                let mut o = IDENTITY_ORDER;
                if config.shuffle_options {
                    o.shuffle(&mut rng);
                }
                o
            })?;
            model.net.zero_grad();
            let out = model.net.forward(&batch.x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(kind, &out, &batch)?;
            model.net.backward(&grad)?;
            adam.step(model.net.params_mut(), lr as f32)?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = match val_set.as_deref_mut() {
            Some(v) if !v.is_empty() => Some(mean_loss(model, v, stats, config.batch_size)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: total / seen.max(1) as f64,
            val_loss: val.map(|v| v.loss),
            val_accuracy: val.and_then(|v| v.accuracy),
            val_mse: val.and_then(|v| v.mse),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok((adam, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    /// `(family, correct, total)` for every family present, in enum order.
    pub per_family: Vec<(QuestionFamily, usize, usize)>,
    pub accuracy: f64,
    /// Mean probability given to the correct option.
    pub mean_correct_probability: f64,
    pub families: Vec<QuestionFamily>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<[f32; 4]>,
}

pub fn evaluate_classifier(
    model: &mut Model,
    source: &mut dyn RecordSource,
    stats: &NormalizationStats,
) -> Result<ClassifierReport, ModelError> {
    if model.kind() != ModelKind::Classifier {
        return Err(ModelError::Scenario { model: model.kind(), expected: model.kind().scenario(), got: ModelKind::Classifier.scenario() });
    }
    let n = source.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let mut report = ClassifierReport {
        per_family: Vec::new(),
        accuracy: 0.0,
        mean_correct_probability: 0.0,
        families: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        predictions: Vec::with_capacity(n),
        probabilities: Vec::with_capacity(n),
    };
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(DEFAULT_BATCH) {
        let batch = assemble(ModelKind::Classifier, source, chunk, stats, || IDENTITY_ORDER)?;
        let p = softmax(&model.net.forward(&batch.x, Mode::Eval)?)?;
        for (row, (&label, &family)) in p.data().chunks(4).zip(batch.labels.iter().zip(&batch.families)) {
            let probs: [f32; 4] = row.try_into().expect("four options");
            report.predictions.push(argmax(&probs));
            report.probabilities.push(probs);
            report.labels.push(label);
            report.families.push(family);
        }
    }
    let mut correct = 0;
    for family in QuestionFamily::ALL {
        let (mut c, mut t) = (0, 0);
        for i in (0..n).filter(|&i| report.families[i] == family) {
            t += 1;
            c += (report.predictions[i] == report.labels[i]) as usize;
        }
        if t > 0 {
            report.per_family.push((family, c, t));
        }
        correct += c;
    }
    report.accuracy = correct as f64 / n as f64;
    report.mean_correct_probability =
        report.probabilities.iter().zip(&report.labels).map(|(p, &l)| p[l] as f64).sum::<f64>() / n as f64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderReport {
    /// `(family, mean mse, count)` for every family present.
    pub per_family: Vec<(QuestionFamily, f64, usize)>,
    pub mean_mse: f64,
    pub families: Vec<QuestionFamily>,
    pub mse: Vec<f64>,
}

/// Per-question MSE between the denormalized prediction, clamped to
/// `[0, 1]`, and the target frame.
pub fn evaluate_autoencoder(
    model: &mut Model,
    source: &mut dyn RecordSource,
    stats: &NormalizationStats,
) -> Result<AutoencoderReport, ModelError> {
    if model.kind() != ModelKind::Autoencoder {
        return Err(ModelError::Scenario { model: model.kind(), expected: model.kind().scenario(), got: ModelKind::Autoencoder.scenario() });
    }
    let n = source.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let mut families = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(DEFAULT_BATCH) {
        let batch = assemble(ModelKind::Autoencoder, source, chunk, stats, || IDENTITY_ORDER)?;
        let out = model.net.forward(&batch.x, Mode::Eval)?;
        let targets = batch.targets.as_ref().expect("targets");
        for (p, t) in out.data().chunks(FRAME).zip(targets.data().chunks(FRAME)) {
            errors.push(intensity_mse(p, t, stats));
        }
        families.extend(batch.families);
    }
    let mut per_family = Vec::new();
    for family in QuestionFamily::ALL {
        let v: Vec<f64> = (0..n).filter(|&i| families[i] == family).map(|i| errors[i]).collect();
        if !v.is_empty() {
            per_family.push((family, v.iter().sum::<f64>() / v.len() as f64, v.len()));
        }
    }
    let mean_mse = errors.iter().sum::<f64>() / n as f64;
    Ok(AutoencoderReport { per_family, mean_mse, families, mse: errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, Architecture};
    use crate::qgen::{gen_dataset, DatasetConfig, Scenario};

    const TINY: [usize; 4] = [4, 4, 8, 8];

    fn records(scenario: Scenario, n: usize, seed: u64) -> (Vec<Record>, NormalizationStats) {
        let mut stream = gen_dataset(&DatasetConfig::uniform(scenario, n, seed)).unwrap();
        let r: Vec<Record> = stream.by_ref().collect::<Result<_, _>>().unwrap();
        (r, stream.stats().unwrap())
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig { batch_size: 8, epochs, schedule: LrSchedule::new(2e-3), ..TrainConfig::default() }
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let (mut data, stats) = records(Scenario::MultipleChoice, 32, 1);
        let run = |data: &mut Vec<Record>| {
            let mut m = build(Architecture::classifier(TINY), 9).unwrap();
            let before = mean_loss(&mut m, data, &stats, 16).unwrap().loss;
            let (_, h) = train(&mut m, data, None, &stats, &quick(3), None, &mut |_| {}).unwrap();
            let after = mean_loss(&mut m, data, &stats, 16).unwrap().loss;
            (before, after, h)
        };
        let (before, after, h) = run(&mut data);
        assert!(after < before, "{before} -> {after}");
        assert_eq!(h.len(), 3);
        assert_eq!(run(&mut data).2, h);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let (mut data, stats) = records(Scenario::MultipleChoice, 25, 4);
        let mut whole = build(Architecture::classifier(TINY), 5).unwrap();
        let (_, h) = train(&mut whole, &mut data, None, &stats, &quick(2), None, &mut |_| {}).unwrap();

        let mut split = build(Architecture::classifier(TINY), 5).unwrap();
        let (adam, _) = train(&mut split, &mut data, None, &stats, &quick(1), None, &mut |_| {}).unwrap();
        let ck = split.checkpoint(Some((&adam.config, &adam.state)), stats, 1);
        let mut resumed = crate::models::Model::from_checkpoint(&ck).unwrap();
        let adam = Adam { config: adam.config, state: ck.adam.clone().unwrap().1 };
        let (_, h2) = train(&mut resumed, &mut data, None, &stats, &quick(1), Some(adam), &mut |_| {}).unwrap();
        assert_eq!(h2[0].epoch, 2);
        assert_eq!(h2[0].train_loss, h[1].train_loss);
        assert_eq!(resumed.net.named_tensors(), whole.net.named_tensors());
    }

    #[test]
    fn scenario_mismatch_is_reported() {
        let (mut data, stats) = records(Scenario::Open, 4, 2);
        let mut m = build(Architecture::classifier(TINY), 0).unwrap();
        let err = train(&mut m, &mut data, None, &stats, &quick(1), None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, ModelError::Scenario { .. }), "{err}");
        assert!(evaluate_classifier(&mut m, &mut data, &stats).is_err());
    }

    #[test]
    fn classifier_report_is_consistent() {
        let (mut data, stats) = records(Scenario::MultipleChoice, 21, 3);
        let mut m = build(Architecture::classifier(TINY), 0).unwrap();
        let r = evaluate_classifier(&mut m, &mut data, &stats).unwrap();
        assert_eq!(r.per_family.len(), 7);
        assert_eq!(r.per_family.iter().map(|f| f.2).sum::<usize>(), 21);
        let correct = r.predictions.iter().zip(&r.labels).filter(|(a, b)| a == b).count();
        assert!((r.accuracy - correct as f64 / 21.0).abs() < 1e-12);
        for (rec, &l) in data.iter().zip(&r.labels) {
            assert_eq!(rec.answer_index(), Some(l as u8));
        }
    }

    #[test]
    fn autoencoder_trains_and_reports() {
        let (mut data, stats) = records(Scenario::Open, 16, 4);
        let mut m = build(Architecture::autoencoder(TINY), 1).unwrap();
        let before = evaluate_autoencoder(&mut m, &mut data, &stats).unwrap();
        train(&mut m, &mut data, None, &stats, &quick(4), None, &mut |_| {}).unwrap();
        let after = evaluate_autoencoder(&mut m, &mut data, &stats).unwrap();
        assert!(after.mean_mse < before.mean_mse, "{} -> {}", before.mean_mse, after.mean_mse);
        assert_eq!(after.per_family.len(), 5);
    }

    #[test]
    fn exact_prediction_scores_zero() {
        // Independent check of the metric: a tensor equal to the normalized
        // target denormalizes to the target exactly.
        let (data, stats) = records(Scenario::Open, 1, 5);
        let Record::Open(q) = &data[0] else { panic!() };
        let mut t = alloc::vec![0.0; FRAME];
        stack_frames(&[&q.target], &stats, &mut t);
        let back = crate::qgen::denormalize_to_canvas(&t, &stats);
        assert_eq!(back, q.target);
    }
}
