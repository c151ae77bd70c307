//! Dataset assembly: per-record random streams, the family schedule, and
//! normalization statistics. Writing records to disk is left to the caller.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    add_noise, gen_open_question, gen_question, GenerationError, NormalizationStats, OpenQuestion,
    Question, QuestionFamily,
};
use crate::geometry::{Canvas, CANVAS_SIZE, CHANNELS};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    MultipleChoice,
    Open,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::MultipleChoice => "multiple_choice",
            Scenario::Open => "open",
        }
    }

    /// Accepts the full name or the short forms `mc` / `open`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "multiple_choice" | "mc" => Some(Scenario::MultipleChoice),
            "open" => Some(Scenario::Open),
            _ => None,
        }
    }

    pub fn families(self) -> &'static [QuestionFamily] {
        match self {
            Scenario::MultipleChoice => &QuestionFamily::ALL,
            Scenario::Open => &QuestionFamily::OPEN,
        }
    }

    /// Frames stored per record: 3 context + 4 options, or 2 context + target.
    pub fn frames_per_record(self) -> usize {
        match self {
            Scenario::MultipleChoice => 7,
            Scenario::Open => 3,
        }
    }
}

impl core::fmt::Display for Scenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    MultipleChoice(Question),
    Open(OpenQuestion),
}

impl Record {
    pub fn family(&self) -> QuestionFamily {
        match self {
            Record::MultipleChoice(q) => q.family,
            Record::Open(q) => q.family,
        }
    }

    pub fn scenario(&self) -> Scenario {
        match self {
            Record::MultipleChoice(_) => Scenario::MultipleChoice,
            Record::Open(_) => Scenario::Open,
        }
    }

    pub fn answer_index(&self) -> Option<u8> {
        match self {
            Record::MultipleChoice(q) => Some(q.answer_index),
            Record::Open(_) => None,
        }
    }

    /// Frames in storage order.
    pub fn frames(&self) -> Vec<&Canvas> {
        match self {
            Record::MultipleChoice(q) => q.context.iter().chain(&q.options).collect(),
            Record::Open(q) => q.context.iter().chain(core::iter::once(&q.target)).collect(),
        }
    }

    fn frames_mut(&mut self) -> Vec<&mut Canvas> {
        match self {
            Record::MultipleChoice(q) => q.context.iter_mut().chain(&mut q.options).collect(),
            Record::Open(q) => q.context.iter_mut().chain(core::iter::once(&mut q.target)).collect(),
        }
    }

    /// Rebuilds a record from storage order; `answer_index` is ignored for
    /// open records.
    pub fn from_frames(
        scenario: Scenario,
        family: QuestionFamily,
        answer_index: u8,
        frames: Vec<Canvas>,
    ) -> Option<Record> {
        if frames.len() != scenario.frames_per_record() {
            return None;
        }
        let mut it = frames.into_iter();
        let mut next = || it.next().expect("length checked");
        Some(match scenario {
            Scenario::MultipleChoice => {
                if answer_index > 3 {
                    return None;
                }
                Record::MultipleChoice(Question {
                    family,
                    context: [next(), next(), next()],
                    options: [next(), next(), next(), next()],
                    answer_index,
                })
            }
            Scenario::Open => {
                if !family.has_open_form() {
                    return None;
                }
                Record::Open(OpenQuestion {
                    family,
                    context: [next(), next()],
                    target: next(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scenario: Scenario,
    /// Records per family, indexed by `QuestionFamily::code`.
    pub counts: [usize; 7],
    /// Standard deviation of added noise on the 8-bit scale; 0 for clean data.
    pub noise_sigma8: f64,
}

impl DatasetConfig {
    /// `total` records split evenly over the scenario's families, the
    /// remainder going to the earliest families.
    pub fn uniform(scenario: Scenario, total: usize, seed: u64) -> Self {
        Self::with_families(scenario, scenario.families(), total, seed)
    }

    pub fn with_families(scenario: Scenario, families: &[QuestionFamily], total: usize, seed: u64) -> Self {
        let mut counts = [0; 7];
        let n = families.len().max(1);
        for (i, f) in families.iter().enumerate() {
            counts[f.code() as usize] = total / n + usize::from(i < total % n);
        }
        Self {
            seed,
            scenario,
            counts,
            noise_sigma8: 0.0,
        }
    }

    pub fn with_noise(mut self, sigma8: f64) -> Self {
        self.noise_sigma8 = sigma8;
        self
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.noise_sigma8.is_finite() && self.noise_sigma8 >= 0.0) {
            return Err(GenerationError::InvalidConfig("noise sigma must be finite and non-negative"));
        }
        if self.total() == 0 {
            return Err(GenerationError::InvalidConfig("dataset would be empty"));
        }
        if self.scenario == Scenario::Open && self.counts[QuestionFamily::Number.code() as usize] > 0 {
            return Err(GenerationError::InvalidConfig("number has no open-question form"));
        }
        Ok(())
    }
}

/// What a dataset file holds, as recorded next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scenario: Scenario,
    pub counts: [usize; 7],
    pub noise_sigma8: f64,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl From<&DatasetConfig> for DatasetManifest {
    fn from(c: &DatasetConfig) -> Self {
        Self {
            seed: c.seed,
            scenario: c.scenario,
            counts: c.counts,
            noise_sigma8: c.noise_sigma8,
            format_version: FORMAT_VERSION,
        }
    }
}

/// Family of every record index: families take turns in enum order until
/// each has used up its count.
pub fn family_schedule(counts: &[usize; 7]) -> Vec<QuestionFamily> {
    let mut left = *counts;
    let mut out = Vec::with_capacity(counts.iter().sum());
    while left.iter().any(|&c| c > 0) {
        for f in QuestionFamily::ALL {
            let c = &mut left[f.code() as usize];
            if *c > 0 {
                *c -= 1;
                out.push(f);
            }
        }
    }
    out
}

/// The independent random stream of record `index`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates record `index` of a dataset. Depends only on the seed, the
/// index and the family, so records can be produced in any order.
pub fn generate_record(
    config: &DatasetConfig,
    index: u64,
    family: QuestionFamily,
) -> Result<Record, GenerationError> {
    let mut rng = record_rng(config.seed, index);
    let mut record = match config.scenario {
        Scenario::MultipleChoice => Record::MultipleChoice(gen_question(family, &mut rng)?.question),
        Scenario::Open => Record::Open(gen_open_question(family, &mut rng)?.question),
    };
    if config.noise_sigma8 > 0.0 {
        for frame in record.frames_mut() {
            *frame = add_noise(frame, config.noise_sigma8, &mut rng);
        }
    }
    Ok(record)
}

/// Streams the records of `config` in index order while accumulating
/// normalization statistics over every frame it yields.
pub fn gen_dataset(config: &DatasetConfig) -> Result<DatasetStream, GenerationError> {
    config.validate()?;
    Ok(DatasetStream {
        config: config.clone(),
        schedule: family_schedule(&config.counts),
        next: 0,
        stats: StatsAccumulator::default(),
    })
}

pub struct DatasetStream {
    config: DatasetConfig,
    schedule: Vec<QuestionFamily>,
    next: usize,
    stats: StatsAccumulator,
}

impl DatasetStream {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::from(&self.config)
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    /// Statistics over the records yielded so far.
    pub fn stats(&self) -> Option<NormalizationStats> {
        self.stats.finish()
    }
}

impl Iterator for DatasetStream {
    type Item = Result<Record, GenerationError>;

    fn next(&mut self) -> Option<Self::Item> {
        let family = *self.schedule.get(self.next)?;
        let index = self.next as u64;
        self.next += 1;
        let record = generate_record(&self.config, index, family);
        if let Ok(r) = &record {
            for frame in r.frames() {
                self.stats.add(frame);
            }
        }
        Some(record)
    }
}

/// Running per-channel sums for mean and standard deviation.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    count: u64,
    sum: [u64; CHANNELS],
    sum_sq: [u64; CHANNELS],
}

impl StatsAccumulator {
    pub fn add(&mut self, canvas: &Canvas) {
        // Integer sums keep the result independent of accumulation order.
        for px in canvas.as_bytes().chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                let v = px[c] as u64;
                self.sum[c] += v;
                self.sum_sq[c] += v * v;
            }
        }
        self.count += (CANVAS_SIZE * CANVAS_SIZE) as u64;
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.count += other.count;
        for c in 0..CHANNELS {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
    }

    /// `None` when nothing was added or a channel is constant.
    pub fn finish(&self) -> Option<NormalizationStats> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let mut mean = [0.0f32; CHANNELS];
        let mut std = [0.0f32; CHANNELS];
        for c in 0..CHANNELS {
            let m = self.sum[c] as f64 / n;
            let var = (self.sum_sq[c] as f64 / n - m * m).max(0.0);
            mean[c] = (m / 255.0) as f32;
            std[c] = (libm::sqrt(var) / 255.0) as f32;
        }
        NormalizationStats::new(mean, std)
    }
}
