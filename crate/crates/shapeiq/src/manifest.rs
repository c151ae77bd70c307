//! The `.manifest` file written next to every `.pfq` dataset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use shapeiq_core::qgen::{DatasetManifest, NormalizationStats, QuestionFamily, Scenario};

use crate::kv::KvFile;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetInfo {
    pub manifest: DatasetManifest,
    /// Per-channel statistics over every stored frame.
    pub stats: NormalizationStats,
    /// SHA-256 of the `.pfq` file.
    pub sha256: String,
    /// File name of the `.pfq` file, relative to the manifest.
    pub data: String,
}

/// `data.pfq` → `data.manifest`.
pub fn manifest_path(data: &Path) -> PathBuf {
    data.with_extension("manifest")
}

fn triple(v: &[f32; 3]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_triple(s: &str) -> Option<[f32; 3]> {
    let v: Vec<f32> = s.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

impl DatasetInfo {
    pub fn to_kv(&self) -> KvFile {
        let m = &self.manifest;
        let mut kv = KvFile::new();
        kv.push("format_version", m.format_version)
            .push("data", &self.data)
            .push("sha256", &self.sha256)
            .push("scenario", m.scenario)
            .push("seed", m.seed)
            .push("total", m.total())
            .push("noise_sigma8", m.noise_sigma8);
        for f in QuestionFamily::ALL {
            kv.push(&format!("count.{f}"), m.counts[f.code() as usize]);
        }
        kv.push("stats.mean", triple(&self.stats.mean)).push("stats.std", triple(&self.stats.std));
        kv
    }

    pub fn from_kv(kv: &KvFile) -> anyhow::Result<Self> {
        let scenario = Scenario::from_name(kv.require("scenario")?).context("unknown scenario")?;
        let mut counts = [0usize; 7];
        for f in QuestionFamily::ALL {
            counts[f.code() as usize] = kv.parsed(&format!("count.{f}"))?;
        }
        let manifest = DatasetManifest {
            seed: kv.parsed("seed")?,
            scenario,
            counts,
            noise_sigma8: kv.parsed("noise_sigma8")?,
            format_version: kv.parsed("format_version")?,
        };
        let total: usize = kv.parsed("total")?;
        if total != manifest.total() {
            bail!("total {total} does not match the family counts ({})", manifest.total());
        }
        let mean = parse_triple(kv.require("stats.mean")?).context("bad stats.mean")?;
        let std = parse_triple(kv.require("stats.std")?).context("bad stats.std")?;
        let stats = NormalizationStats::new(mean, std).context("stats.std must be positive")?;
        Ok(Self { manifest, stats, sha256: kv.require("sha256")?.to_string(), data: kv.require("data")?.to_string() })
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Self::from_kv(&KvFile::read(path)?).with_context(|| format!("reading {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        self.to_kv().write(path)
    }
}
