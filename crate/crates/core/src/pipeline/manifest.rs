//! Line-delimited JSON run manifest. Records are only ever appended.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddim::DiffusionConfig;
use crate::error::{Error, Result};
use crate::imagecore::ChannelStats;
use crate::metrics::MetricReport;
use crate::prism::{ChromaSpec, NoiseSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_ECHO_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSeeds {
    pub style: u64,
    pub noise: u64,
    pub chroma: u64,
    pub diffusion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    pub mask_index: usize,
    pub sample_index: usize,
    pub seeds: SampleSeeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<ChannelStats>,
    pub noise: NoiseSpec,
    pub chroma: ChromaSpec,
    pub diffusion: DiffusionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The records of one manifest file, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn ok_count(&self) -> usize {
        self.records.iter().filter(|r| r.status == Status::Ok).count()
    }

    pub fn failed_count(&self) -> usize {
        self.records.len() - self.ok_count()
    }

    /// Ids whose latest record is ok.
    pub fn completed_ids(&self) -> BTreeSet<String> {
        let mut done = BTreeSet::new();
        for r in &self.records {
            match r.status {
                Status::Ok => done.insert(r.id.clone()),
                Status::Failed => done.remove(&r.id),
            };
        }
        done
    }

    /// Latest ok record per id, in first-appearance order.
    pub fn latest_ok(&self) -> Vec<&ManifestRecord> {
        let done = self.completed_ids();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in self.records.iter().rev() {
            if r.status == Status::Ok && done.contains(&r.id) && seen.insert(r.id.clone()) {
                out.push(r);
            }
        }
        out.reverse();
        out
    }

    /// Read a manifest; a torn final line (from an interrupted write) is ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => records.push(r),
                Err(_) if i == last => log::warn!("ignoring truncated final manifest line in {}", path.display()),
                Err(e) => return Err(Error::Serde(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            records,
        })
    }
}

/// Append-only writer; each batch is written and flushed as whole lines.
pub struct ManifestWriter {
    file: File,
    path: PathBuf,
}

impl ManifestWriter {
    /// Open for appending, first dropping a torn final line left by an interrupted run.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Ok(bytes) = std::fs::read(&path) {
            if bytes.last().is_some_and(|&b| b != b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let f = OpenOptions::new().write(true).open(&path).map_err(|e| Error::io(&path, e))?;
                f.set_len(keep as u64).map_err(|e| Error::io(&path, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    pub fn append(&mut self, records: &[ManifestRecord]) -> Result<()> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?);
            buf.push('\n');
        }
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
