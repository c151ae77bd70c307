//! The two networks: a multiple-choice classifier over 21 stacked input
//! channels and an encoder–decoder that draws the next frame from two.

mod train;

pub use train::{
    evaluate_autoencoder, evaluate_classifier, intensity_mse, mean_loss, train, AutoencoderReport, ClassifierReport,
    EpochRecord, LossSummary, TrainConfig, DEFAULT_BATCH,
};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Canvas, CANVAS_SIZE, CHANNELS};
use crate::nn::{
    softmax, AdamConfig, AdamState, BatchNorm, Conv2d, Deconv2d, Elu, Flatten, LeakyRelu, Linear, Mode, NnError,
    Relu, Sequential, Tensor,
};
use crate::qgen::{denormalize_to_canvas, normalize_into, NormalizationStats, Question, Record, Scenario};

/// Length of the autoencoder's code vector.
pub const CODE_DIM: usize = 32;
/// Conv widths of the published DCGAN-style stack.
pub const PAPER_WIDTHS: [usize; 4] = [64, 128, 256, 512];
/// A quarter of the paper widths; about 16× cheaper to train.
pub const DESK_WIDTHS: [usize; 4] = [16, 32, 64, 128];
/// Context slots plus option slots, three channels each.
pub const CLASSIFIER_CHANNELS: usize = CHANNELS * (3 + 4);
/// Two context frames.
pub const AUTOENCODER_CHANNELS: usize = CHANNELS * 2;
const LEAK: f32 = 0.2;
const PLANE: usize = CANVAS_SIZE * CANVAS_SIZE;
const FRAME: usize = CHANNELS * PLANE;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("a {model} model needs {expected} records, got {got}")]
    Scenario { model: ModelKind, expected: Scenario, got: Scenario },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad architecture: {0}")]
    Architecture(String),
    #[error("checkpoint does not match the architecture: {0}")]
    Checkpoint(String),
    #[error("record source: {0}")]
    Source(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Classifier,
    Autoencoder,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Autoencoder => "autoencoder",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "classifier" => Some(ModelKind::Classifier),
            "autoencoder" => Some(ModelKind::Autoencoder),
            _ => None,
        }
    }

    pub fn scenario(self) -> Scenario {
        match self {
            ModelKind::Classifier => Scenario::MultipleChoice,
            ModelKind::Autoencoder => Scenario::Open,
        }
    }
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to rebuild a network's layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ModelKind,
    /// Channels after each of the four stride-2 convolutions.
    pub widths: [usize; 4],
    /// Batch normalization after the autoencoder's hidden layers. The
    /// classifier always normalizes.
    pub batchnorm: bool,
}

impl Architecture {
    pub fn classifier(widths: [usize; 4]) -> Self {
        Self { kind: ModelKind::Classifier, widths, batchnorm: true }
    }

    pub fn autoencoder(widths: [usize; 4]) -> Self {
        Self { kind: ModelKind::Autoencoder, widths, batchnorm: true }
    }

    /// `kind widths=a,b,c,d batchnorm=true`, the form stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let w = self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        format!("{} widths={w} batchnorm={}", self.kind, self.batchnorm)
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::Architecture(s.to_string());
        let mut parts = s.split_whitespace();
        let kind = parts.next().and_then(ModelKind::from_name).ok_or_else(bad)?;
        let (mut widths, mut batchnorm) = (None, None);
        for part in parts {
            match part.split_once('=') {
                Some(("widths", v)) => {
                    let w: Vec<usize> = v.split(',').map(|x| x.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
                    widths = Some(<[usize; 4]>::try_from(w).map_err(|_| bad())?);
                }
                Some(("batchnorm", v)) => batchnorm = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let arch = Self { kind, widths: widths.ok_or_else(bad)?, batchnorm: batchnorm.ok_or_else(bad)? };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.contains(&0) {
            return Err(ModelError::Architecture(format!("zero width in {:?}", self.widths)));
        }
        Ok(())
    }
}

/// A built network plus its architecture.
pub struct Model {
    pub arch: Architecture,
    pub net: Sequential,
    /// Layers belonging to the encoder (autoencoder only).
    encoder_len: usize,
}

/// Builds and initializes a network. Same architecture and seed give the
/// same parameters.
pub fn build(arch: Architecture, seed: u64) -> Result<Model, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [w0, w1, w2, w3] = arch.widths;
    let mut net = Sequential::new();
    let mut encoder_len = 0;
    match arch.kind {
        ModelKind::Classifier => {
            for (cin, cout) in [(CLASSIFIER_CHANNELS, w0), (w0, w1), (w1, w2), (w2, w3)] {
                net.push(Conv2d::new(cin, cout, 2, 1, &mut rng).without_bias());
                net.push(BatchNorm::new(cout));
                net.push(Relu::new());
            }
            net.push(Flatten::new());
            net.push(Linear::new(16 * w3, 4, &mut rng));
        }
        ModelKind::Autoencoder => {
            let bn = arch.batchnorm;
            let encoder = [(AUTOENCODER_CHANNELS, w0, 2, 1), (w0, w1, 2, 1), (w1, w2, 2, 1), (w2, w3, 2, 1), (w3, CODE_DIM, 1, 0)];
            for (i, &(cin, cout, s, p)) in encoder.iter().enumerate() {
                // The first layer and the code layer stay unnormalized.
                let norm = bn && i != 0 && i != encoder.len() - 1;
                let conv = Conv2d::new(cin, cout, s, p, &mut rng);
                net.push(if norm { conv.without_bias() } else { conv });
                if norm {
                    net.push(BatchNorm::new(cout));
                }
                net.push(LeakyRelu::new(LEAK));
            }
            encoder_len = net.layers.len();
            let decoder = [(CODE_DIM, w3, 1, 0), (w3, w2, 2, 1), (w2, w1, 2, 1), (w1, w0, 2, 1), (w0, CHANNELS, 2, 1)];
            for (i, &(cin, cout, s, p)) in decoder.iter().enumerate() {
                let last = i == decoder.len() - 1;
                let deconv = Deconv2d::new(cin, cout, s, p, &mut rng);
                if last {
                    net.push(deconv);
                    break;
                }
                net.push(if bn { deconv.without_bias() } else { deconv });
                if bn {
                    net.push(BatchNorm::new(cout));
                }
                net.push(Elu::new(1.0));
            }
        }
    }
    Ok(Model { arch, net, encoder_len })
}

/// Normalized CHW stack of frames: `frames.len() · 3` channels.
pub fn stack_frames(frames: &[&Canvas], stats: &NormalizationStats, out: &mut [f32]) {
    for (i, f) in frames.iter().enumerate() {
        normalize_into(f, stats, &mut out[i * FRAME..(i + 1) * FRAME]);
    }
}

/// Classifier input for one question with option slot `j` holding option
/// `order[j]`.
pub fn classifier_input(q: &Question, order: &[usize; 4], stats: &NormalizationStats, out: &mut [f32]) {
    let frames: [&Canvas; 7] = [
        &q.context[0],
        &q.context[1],
        &q.context[2],
        &q.options[order[0]],
        &q.options[order[1]],
        &q.options[order[2]],
        &q.options[order[3]],
    ];
    stack_frames(&frames, stats, out);
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn expect(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.arch.kind != kind {
            return Err(ModelError::Scenario { model: self.arch.kind, expected: self.arch.kind.scenario(), got: kind.scenario() });
        }
        Ok(())
    }

    /// Raw network output for a prepared batch.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        Ok(self.net.forward(x, mode)?)
    }

    /// Code vectors (`N×32×1×1`) for a batch of autoencoder inputs.
    pub fn encode(&mut self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.expect(ModelKind::Autoencoder)?;
        let mut h = x.clone();
        for layer in &mut self.net.layers[..self.encoder_len] {
            h = layer.forward(&h, Mode::Eval)?;
        }
        Ok(h)
    }

    /// Most probable option (ties to the lowest index) and all four
    /// probabilities.
    pub fn predict_choice(&mut self, q: &Question, stats: &NormalizationStats) -> Result<(usize, [f32; 4]), ModelError> {
        self.expect(ModelKind::Classifier)?;
        let mut x = Tensor::zeros(&[1, CLASSIFIER_CHANNELS, CANVAS_SIZE, CANVAS_SIZE]);
        classifier_input(q, &[0, 1, 2, 3], stats, x.data_mut());
        let p = softmax(&self.net.forward(&x, Mode::Eval)?)?;
        let probs: [f32; 4] = p.data().try_into().expect("four logits");
        Ok((argmax(&probs), probs))
    }

    /// Next frame from two context frames, clamped to the byte range.
    pub fn predict_frame(&mut self, context: &[Canvas; 2], stats: &NormalizationStats) -> Result<Canvas, ModelError> {
        self.expect(ModelKind::Autoencoder)?;
        let mut x = Tensor::zeros(&[1, AUTOENCODER_CHANNELS, CANVAS_SIZE, CANVAS_SIZE]);
        stack_frames(&[&context[0], &context[1]], stats, x.data_mut());
        let y = self.net.forward(&x, Mode::Eval)?;
        Ok(denormalize_to_canvas(y.data(), stats))
    }

    /// Snapshot of everything a checkpoint stores.
    pub fn checkpoint(&self, adam: Option<(&AdamConfig, &AdamState)>, stats: NormalizationStats, epoch: u32) -> Checkpoint {
        Checkpoint {
            arch: self.arch,
            tensors: self.net.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            adam: adam.map(|(c, s)| (*c, s.clone())),
            stats,
            epoch,
        }
    }

    /// Rebuilds the network and copies every tensor in; names and shapes
    /// must match exactly.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let mut model = build(ck.arch, 0)?;
        let expected = model.net.named_tensors().len();
        if expected != ck.tensors.len() {
            return Err(ModelError::Checkpoint(format!("{} tensors, expected {expected}", ck.tensors.len())));
        }
        let mut it = ck.tensors.iter();
        let mut err = None;
        model.net.visit_tensors_mut(&mut |name, t| {
            let Some((n, v)) = it.next() else { return };
            if n != name || v.shape() != t.shape() {
                err.get_or_insert_with(|| format!("{n} {:?} where {name} {:?} was expected", v.shape(), t.shape()));
            } else {
                t.data_mut().copy_from_slice(v.data());
            }
        });
        match err {
            Some(e) => Err(ModelError::Checkpoint(e)),
            None => Ok(model),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A model's full persistent state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub tensors: Vec<(String, Tensor)>,
    pub adam: Option<(AdamConfig, AdamState)>,
    pub stats: NormalizationStats,
    pub epoch: u32,
}

/// Random access to dataset records, in memory or on disk.
pub trait RecordSource {
    fn len(&self) -> usize;
    fn get(&mut self, index: usize) -> Result<Record, ModelError>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RecordSource for Vec<Record> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&mut self, index: usize) -> Result<Record, ModelError> {
        self.as_slice().get(index).cloned().ok_or_else(|| ModelError::Source(format!("index {index} out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qgen::{gen_open_question, gen_question, QuestionFamily};

    const TINY: [usize; 4] = [4, 4, 8, 8];

    #[test]
    fn classifier_outputs_a_distribution() {
        let mut m = build(Architecture::classifier(TINY), 1).unwrap();
        let x = Tensor::zeros(&[2, CLASSIFIER_CHANNELS, 64, 64]);
        let logits = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(logits.shape(), [2, 4]);
        assert!(logits.is_finite());
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn classifier_has_four_convolutions() {
        let m = build(Architecture::classifier(TINY), 1).unwrap();
        assert_eq!(m.net.layers.iter().filter(|l| l.kind() == "conv").count(), 4);
    }

    #[test]
    fn autoencoder_code_and_output_shapes() {
        for bn in [true, false] {
            let arch = Architecture { batchnorm: bn, ..Architecture::autoencoder(TINY) };
            let mut m = build(arch, 2).unwrap();
            let x = Tensor::zeros(&[1, AUTOENCODER_CHANNELS, 64, 64]);
            let z = m.encode(&x).unwrap();
            assert_eq!(z.shape(), [1, CODE_DIM, 1, 1]);
            let y = m.forward(&x, Mode::Eval).unwrap();
            assert_eq!(y.shape(), [1, 3, 64, 64]);
            let convs = m.net.layers.iter().filter(|l| l.kind() == "conv").count();
            let deconvs = m.net.layers.iter().filter(|l| l.kind() == "deconv").count();
            assert_eq!((convs, deconvs), (5, 5));
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build(Architecture::classifier(TINY), 7).unwrap();
        let b = build(Architecture::classifier(TINY), 7).unwrap();
        let c = build(Architecture::classifier(TINY), 8).unwrap();
        let flat = |m: &Model| m.net.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn parameter_count_follows_widths() {
        let [a, b, c, d] = TINY;
        let m = build(Architecture::classifier(TINY), 0).unwrap();
        let convs = 16 * (CLASSIFIER_CHANNELS * a + a * b + b * c + c * d);
        let bns = 2 * (a + b + c + d);
        assert_eq!(m.param_count(), convs + bns + 16 * d * 4 + 4);
    }

    #[test]
    fn descriptor_round_trips() {
        for arch in [Architecture::classifier(PAPER_WIDTHS), Architecture { batchnorm: false, ..Architecture::autoencoder(DESK_WIDTHS) }] {
            assert_eq!(Architecture::parse(&arch.descriptor()).unwrap(), arch);
        }
        assert!(Architecture::parse("classifier widths=1,2,3").is_err());
        assert!(Architecture::parse("gan widths=1,2,3,4 batchnorm=true").is_err());
    }

    #[test]
    fn predictions_have_the_right_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = NormalizationStats::IDENTITY;
        let mut c = build(Architecture::classifier(TINY), 3).unwrap();
        let q = gen_question(QuestionFamily::Size, &mut rng).unwrap().question;
        let (i, p) = c.predict_choice(&q, &stats).unwrap();
        assert!(i < 4 && (p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(i, argmax(&p));
        let mut a = build(Architecture::autoencoder(TINY), 3).unwrap();
        let oq = gen_open_question(QuestionFamily::Size, &mut rng).unwrap().question;
        let frame = a.predict_frame(&oq.context, &stats).unwrap();
        assert_eq!(frame.as_bytes().len(), 64 * 64 * 3);
        assert!(c.predict_frame(&oq.context, &stats).is_err());
        assert!(a.predict_choice(&q, &stats).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn checkpoint_restores_outputs() {
        let mut m = build(Architecture::autoencoder(TINY), 5).unwrap();
        let ck = m.checkpoint(None, NormalizationStats::IDENTITY, 3);
        let mut back = Model::from_checkpoint(&ck).unwrap();
        let x = Tensor::full(&[1, AUTOENCODER_CHANNELS, 64, 64], 0.3);
        assert_eq!(m.forward(&x, Mode::Eval).unwrap(), back.forward(&x, Mode::Eval).unwrap());
        let mut wrong = ck.clone();
        wrong.tensors.pop();
        assert!(Model::from_checkpoint(&wrong).is_err());
    }
}
