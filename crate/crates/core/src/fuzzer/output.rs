use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::queue::QueueEntry;
use crate::checksum::ChecksumIndex;
use crate::error::{Error, Result};
use crate::tags::encode_sidecar;

/// One line of `stats.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsLine {
    pub execs: u64,
    pub queue_size: usize,
    pub edges: usize,
    pub buckets: usize,
    pub crashes: usize,
    pub checksums_confirmed: usize,
    pub checksums_false_positive: usize,
    pub time_ms: u64,
}

/// Campaign output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    stats: File,
}

fn write(path: &Path, data: &[u8]) -> Result<()> {
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["queue", "crashes"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let sp = root.join("stats.jsonl");
        let stats = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&sp)
            .map_err(|e| Error::io(&sp, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            stats,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn queue_name(e: &QueueEntry) -> String {
        format!("id:{:06},{}", e.id, e.provenance.label())
    }

    /// Writes or rewrites a queue entry and its tag sidecar.
    pub fn save_entry(&self, e: &QueueEntry) -> Result<()> {
        let base = self.root.join("queue").join(Self::queue_name(e));
        write(&base, &e.input)?;
        let side = base.with_file_name(format!("{}.tags", Self::queue_name(e)));
        match &e.tags {
            Some(t) => write(&side, &encode_sidecar(t)),
            None if side.exists() => fs::remove_file(&side).map_err(|err| Error::io(&side, err)),
            None => Ok(()),
        }
    }

    pub fn save_crash(&self, n: usize, reason: &str, input: &[u8], repaired: Option<&[u8]>) -> Result<()> {
        let slug: String = reason
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let name = format!("id:{n:06},sig:{slug}");
        let dir = self.root.join("crashes");
        write(&dir.join(&name), input)?;
        if let Some(r) = repaired {
            write(&dir.join(format!("{name}.repaired")), r)?;
        }
        Ok(())
    }

    pub fn save_ci(&self, ci: &ChecksumIndex) -> Result<()> {
        write(&self.root.join("ci.txt"), ci.to_text().as_bytes())
    }

    pub fn append_stats(&mut self, line: &StatsLine) -> Result<()> {
        let mut s = serde_json::to_string(line)?;
        s.push('\n');
        let p = self.root.join("stats.jsonl");
        self.stats.write_all(s.as_bytes()).map_err(|e| Error::io(&p, e))
    }
}
