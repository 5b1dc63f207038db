use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::types::{
    base64_bytes, sha256_hex, validate_case_id, AthleteMetadata, CaseRecord, ClinicalAnnotation,
    ImageContent, ImageFormat, WaveformImage,
};
use super::{DatasetSplit, StoreError};

const CASES_DIR: &str = "cases";
const IMAGES_DIR: &str = "images";
const SPLIT_FILE: &str = "split.json";

/// An inbound case before validation. Matches the on-disk case import file and
/// the body of `POST /cases`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CasePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub metadata: AthleteMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<ClinicalAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ImageFormat>,
    /// Hex SHA-256 the sender expects; verified against the received bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    #[serde(flatten)]
    pub source: ImageSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    /// Relative paths resolve against the directory holding the case file.
    Path(PathBuf),
    /// Base64 payload.
    Data(#[serde(with = "base64_bytes")] Vec<u8>),
}

impl CasePayload {
    /// Replaces a path image source with its bytes.
    pub fn resolve_image(mut self, base: &Path) -> Result<Self, StoreError> {
        if let Some(image) = &mut self.image {
            if let ImageSource::Path(path) = &image.source {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let bytes = fs::read(&full).map_err(|_| StoreError::MissingImage)?;
                if image.image_id.is_none() {
                    image.image_id = full.file_stem().map(|s| s.to_string_lossy().into_owned());
                }
                image.source = ImageSource::Data(bytes);
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Default, Serialize)]
pub struct IngestSummary {
    pub ingested: Vec<String>,
    pub failed: Vec<(PathBuf, String)>,
}

/// File-backed case store. Reads are concurrent; writes are serialized.
#[derive(Debug)]
pub struct CaseStore {
    root: PathBuf,
    cases: RwLock<BTreeMap<String, CaseRecord>>,
    writer: Mutex<()>,
}

impl CaseStore {
    /// Opens (or creates) a store rooted at `root`, re-validating every persisted record.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(CASES_DIR))?;
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        let mut cases = BTreeMap::new();
        for entry in fs::read_dir(root.join(CASES_DIR))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let mut record: CaseRecord = serde_json::from_str(&text).map_err(|e| {
                StoreError::Corrupt { path: path.clone(), reason: e.to_string() }
            })?;
            if let ImageContent::File(rel) = &record.image.content {
                record.image.content = ImageContent::File(root.join(rel));
            }
            record.validate().map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            cases.insert(record.case_id.clone(), record);
        }
        debug!(root = %root.display(), cases = cases.len(), "opened case store");
        Ok(CaseStore { root, cases: RwLock::new(cases), writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.cases.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, case_id: &str) -> Option<CaseRecord> {
        self.cases.read().get(case_id).cloned()
    }

    pub fn contains(&self, case_id: &str) -> bool {
        self.cases.read().contains_key(case_id)
    }

    /// All case ids in lexicographic order.
    pub fn ids(&self) -> Vec<String> {
        self.cases.read().keys().cloned().collect()
    }

    /// Image path relative to the store root, as written into persisted JSON and exports.
    pub fn relative_image_path(&self, record: &CaseRecord) -> Option<PathBuf> {
        record
            .image
            .file_path()
            .map(|p| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf())
    }

    /// Validates and persists one case.
    pub fn ingest_case(&self, payload: CasePayload) -> Result<CaseRecord, StoreError> {
        payload.metadata.validate()?;
        if let Some(annotation) = &payload.annotation {
            annotation.validate()?;
        }
        let image_payload = payload.image.ok_or(StoreError::MissingImage)?;
        let bytes = match image_payload.source {
            ImageSource::Data(bytes) => bytes,
            ImageSource::Path(_) => return Err(StoreError::MissingImage),
        };
        if bytes.is_empty() {
            return Err(StoreError::MissingImage);
        }
        let computed = sha256_hex(&bytes);
        if let Some(declared) = image_payload.checksum {
            if !declared.eq_ignore_ascii_case(&computed) {
                return Err(StoreError::ChecksumMismatch { declared, computed });
            }
        }

        let _guard = self.writer.lock();
        let case_id = match payload.case_id {
            Some(id) => {
                validate_case_id(&id)?;
                if self.contains(&id) {
                    return Err(StoreError::DuplicateCaseId(id));
                }
                id
            }
            None => self.next_case_id(),
        };
        let image_id = image_payload.image_id.unwrap_or_else(|| case_id.clone());
        let mut image = WaveformImage::from_bytes(image_id, bytes, image_payload.format)?;

        let rel_image = Path::new(IMAGES_DIR).join(format!("{case_id}.{}", image.format.extension()));
        let bytes = match std::mem::replace(&mut image.content, ImageContent::File(rel_image.clone())) {
            ImageContent::Embedded(b) => b,
            ImageContent::File(_) => unreachable!("from_bytes always embeds"),
        };
        let record = CaseRecord {
            case_id: case_id.clone(),
            metadata: payload.metadata,
            image,
            annotation: payload.annotation,
            created_at: payload.created_at.unwrap_or_else(Utc::now),
        };

        write_atomic(&self.root.join(&rel_image), &bytes)?;
        let json = serde_json::to_vec_pretty(&record).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join(CASES_DIR).join(format!("{case_id}.json")), &json)?;

        let mut stored = record;
        stored.image.content = ImageContent::File(self.root.join(&rel_image));
        self.cases.write().insert(case_id, stored.clone());
        Ok(stored)
    }

    /// Ingests every `*.json` case file in `dir`. Failures are collected per file.
    pub fn ingest_dir(&self, dir: &Path) -> Result<IngestSummary, StoreError> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
            .collect();
        files.sort();
        let mut summary = IngestSummary::default();
        for file in files {
            let result = fs::read_to_string(&file)
                .map_err(StoreError::from)
                .and_then(|text| {
                    serde_json::from_str::<CasePayload>(&text).map_err(|e| StoreError::Corrupt {
                        path: file.clone(),
                        reason: e.to_string(),
                    })
                })
                .and_then(|payload| payload.resolve_image(dir))
                .and_then(|payload| self.ingest_case(payload));
            match result {
                Ok(record) => summary.ingested.push(record.case_id),
                Err(e) => {
                    warn!(file = %file.display(), error = %e, "case rejected");
                    summary.failed.push((file, e.to_string()));
                }
            }
        }
        Ok(summary)
    }

    pub fn save_split(&self, split: &DatasetSplit) -> Result<(), StoreError> {
        let _guard = self.writer.lock();
        let json = serde_json::to_vec_pretty(split).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join(SPLIT_FILE), &json)?;
        Ok(())
    }

    pub fn load_split(&self) -> Result<DatasetSplit, StoreError> {
        let path = self.root.join(SPLIT_FILE);
        let text = fs::read_to_string(&path).map_err(|_| StoreError::NoSplit)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { path, reason: e.to_string() })
    }

    fn next_case_id(&self) -> String {
        let cases = self.cases.read();
        (cases.len() + 1..)
            .map(|n| format!("case-{n:06}"))
            .find(|id| !cases.contains_key(id))
            .expect("unbounded range")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(tmp, path)
}
