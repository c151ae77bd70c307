//! The `.pfq` record file.
//!
//! ```text
//! header  "PFQ1" | version: u32 LE | count: u64 LE
//! record  family: u8 | answer: u8 (255 for open questions) | frames
//! ```
//!
//! Frames are raw 64×64 RGB canvases, row-major, 12288 bytes each: three
//! context slots and four options for multiple choice, two context frames
//! and the target for open questions. Every record of a file has the same
//! length, so the scenario follows from the file size and records can be
//! read by index.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use shapeiq_core::geometry::{Canvas, CANVAS_LEN};
use shapeiq_core::models::{ModelError, RecordSource};
use shapeiq_core::qgen::{
    gen_dataset, DatasetConfig, DatasetManifest, GenerationError, NormalizationStats, QuestionFamily, Record,
    Scenario, FORMAT_VERSION,
};

pub const MAGIC: &[u8; 4] = b"PFQ1";
pub const HEADER_LEN: u64 = 16;
const OPEN_ANSWER: u8 = 255;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a dataset file (bad magic)")]
    Magic,
    #[error("unsupported dataset format version {0}")]
    Version(u32),
    #[error("{0}")]
    Corrupt(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("record {index} is out of range for {len} records")]
    OutOfRange { index: usize, len: usize },
}

pub fn record_len(scenario: Scenario) -> u64 {
    2 + (scenario.frames_per_record() * CANVAS_LEN) as u64
}

fn write_header(w: &mut dyn Write, count: u64) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())
}

fn write_record(w: &mut dyn Write, r: &Record) -> io::Result<()> {
    w.write_all(&[r.family().code(), r.answer_index().unwrap_or(OPEN_ANSWER)])?;
    for frame in r.frames() {
        w.write_all(frame.as_bytes())?;
    }
    Ok(())
}

/// Writes `records` (all of one scenario) atomically.
pub fn write_records<'a>(path: &Path, records: impl ExactSizeIterator<Item = &'a Record>) -> Result<(), DatasetError> {
    let count = records.len() as u64;
    crate::write_atomic(path, |w| {
        write_header(w, count)?;
        records.into_iter().try_for_each(|r| write_record(w, r))
    })?;
    Ok(())
}

/// What [`generate`] produced.
#[derive(Debug, Clone)]
pub struct Generated {
    pub manifest: DatasetManifest,
    pub stats: NormalizationStats,
    pub sha256: String,
}

/// Generates the dataset described by `config` straight to disk. `visit`
/// sees every record as it is written.
pub fn generate(path: &Path, config: &DatasetConfig, visit: &mut dyn FnMut(usize, &Record)) -> Result<Generated, DatasetError> {
    config.validate()?;
    let mut stream = gen_dataset(config)?;
    let count = stream.len() as u64;
    let mut failure = None;
    crate::write_atomic(path, |w| {
        write_header(w, count)?;
        for (i, r) in stream.by_ref().enumerate() {
            match r {
                Ok(r) => {
                    write_record(w, &r)?;
                    visit(i, &r);
                }
                Err(e) => {
                    failure = Some(e);
                    return Err(io::Error::other("generation failed"));
                }
            }
        }
        Ok(())
    })
    .map_err(|e| match failure.take() {
        Some(g) => DatasetError::Generation(g),
        None => e.into(),
    })?;
    let stats = stream.stats().ok_or_else(|| DatasetError::Corrupt("dataset has a constant channel".into()))?;
    Ok(Generated { manifest: stream.manifest(), stats, sha256: crate::sha256_file(path)? })
}

/// Random access to a `.pfq` file.
#[derive(Debug)]
pub struct DatasetReader {
    path: PathBuf,
    file: File,
    scenario: Scenario,
    len: usize,
    buf: Vec<u8>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| DatasetError::Magic)?;
        if &header[..4] != MAGIC {
            return Err(DatasetError::Magic);
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(DatasetError::Version(version));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let body = file.metadata()?.len() - HEADER_LEN;
        let scenario = [Scenario::MultipleChoice, Scenario::Open]
            .into_iter()
            .find(|&s| count.checked_mul(record_len(s)) == Some(body))
            .ok_or_else(|| DatasetError::Corrupt(format!("{body} bytes of records do not hold {count} records")))?;
        // An empty file fits either scenario; it has nothing to read anyway.
        let len = usize::try_from(count).map_err(|_| DatasetError::Corrupt("record count overflows".into()))?;
        Ok(Self { path: path.to_path_buf(), file, scenario, len, buf: vec![0; record_len(scenario) as usize] })
    }

    /// A second independent handle on the same file.
    pub fn reopen(&self) -> Result<Self, DatasetError> {
        Self::open(&self.path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn read(&mut self, index: usize) -> Result<Record, DatasetError> {
        if index >= self.len {
            return Err(DatasetError::OutOfRange { index, len: self.len });
        }
        let rl = record_len(self.scenario);
        self.file.seek(SeekFrom::Start(HEADER_LEN + index as u64 * rl))?;
        self.file.read_exact(&mut self.buf)?;
        let corrupt = |what: &str| DatasetError::Corrupt(format!("record {index}: {what}"));
        let family = QuestionFamily::from_code(self.buf[0]).ok_or_else(|| corrupt("unknown family"))?;
        let answer = self.buf[1];
        let frames = self.buf[2..]
            .chunks_exact(CANVAS_LEN)
            .map(|c| Canvas::from_bytes(c.to_vec()).expect("frame-sized chunk"))
            .collect();
        match self.scenario {
            Scenario::MultipleChoice if answer > 3 => return Err(corrupt("answer index out of range")),
            Scenario::Open if answer != OPEN_ANSWER => return Err(corrupt("open record with an answer index")),
            _ => {}
        }
        Record::from_frames(self.scenario, family, answer, frames).ok_or_else(|| corrupt("family has no such form"))
    }

    /// Family of every record, reading only the two-byte record prefixes.
    pub fn families(&mut self) -> Result<Vec<QuestionFamily>, DatasetError> {
        let rl = record_len(self.scenario);
        let mut out = Vec::with_capacity(self.len);
        let mut code = [0u8; 1];
        for i in 0..self.len {
            self.file.seek(SeekFrom::Start(HEADER_LEN + i as u64 * rl))?;
            self.file.read_exact(&mut code)?;
            out.push(QuestionFamily::from_code(code[0]).ok_or_else(|| DatasetError::Corrupt(format!("record {i}: unknown family")))?);
        }
        Ok(out)
    }

    pub fn iter(&mut self) -> impl Iterator<Item = Result<Record, DatasetError>> + '_ {
        (0..self.len).map(move |i| self.read(i))
    }
}

impl RecordSource for DatasetReader {
    fn len(&self) -> usize {
        self.len
    }

    fn get(&mut self, index: usize) -> Result<Record, ModelError> {
        self.read(index).map_err(|e| ModelError::Source(e.to_string()))
    }
}

/// A view onto chosen records of another source, in the given order.
pub struct Subset<'a> {
    pub source: &'a mut dyn RecordSource,
    pub indices: Vec<usize>,
}

impl<'a> Subset<'a> {
    pub fn new(source: &'a mut dyn RecordSource, indices: Vec<usize>) -> Self {
        Self { source, indices }
    }
}

impl RecordSource for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&mut self, index: usize) -> Result<Record, ModelError> {
        let &i = self.indices.get(index).ok_or_else(|| ModelError::Source(format!("index {index} out of range")))?;
        self.source.get(i)
    }
}
