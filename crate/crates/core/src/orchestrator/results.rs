use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusAssessment, ConsortiumReport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub render_ms: f64,
    pub fanout_ms: f64,
    pub parse_ms: f64,
    pub consensus_ms: f64,
    /// Serializing and writing the result file.
    pub persist_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub consortium: ConsortiumReport,
    pub consensus: ConsensusAssessment,
    pub timings: StageTimings,
    pub pipeline_version: String,
    pub template_version: String,
    pub analyzed_at: DateTime<Utc>,
}

/// Append-only result files: `<root>/<case_id>/<analyzed_at>.json`. Existing
/// files are never rewritten; re-analysis adds a new version.
#[derive(Debug)]
pub struct ResultStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ResultStore { root, writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `result`, filling in `timings.persist_ms`. Returns the file path.
    pub fn append(&self, result: &mut CaseResult) -> std::io::Result<PathBuf> {
        let _guard = self.writer.lock();
        let dir = self.root.join(&result.case_id);
        fs::create_dir_all(&dir)?;
        let stamp = result.analyzed_at.format("%Y%m%dT%H%M%S%.6fZ").to_string();
        let path = (0..)
            .map(|n| {
                if n == 0 {
                    dir.join(format!("{stamp}.json"))
                } else {
                    dir.join(format!("{stamp}_{n:04}.json"))
                }
            })
            .find(|p| !p.exists())
            .expect("unbounded");

        let started = std::time::Instant::now();
        let tmp = path.with_extension("tmp");
        write_json(&tmp, result)?;
        result.timings.persist_ms = started.elapsed().as_secs_f64() * 1000.0;
        write_json(&tmp, result)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// All stored versions for a case, oldest first.
    pub fn versions(&self, case_id: &str) -> std::io::Result<Vec<PathBuf>> {
        let dir = self.root.join(case_id);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn latest(&self, case_id: &str) -> std::io::Result<Option<CaseResult>> {
        match self.versions(case_id)?.last() {
            Some(path) => read_result(path).map(Some),
            None => Ok(None),
        }
    }
}

pub fn read_result(path: &Path) -> std::io::Result<CaseResult> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

fn write_json(path: &Path, value: &CaseResult) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value).map_err(std::io::Error::other)?;
    file.write_all(b"\n")?;
    file.sync_all()
}
