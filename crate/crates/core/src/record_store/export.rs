//! Instruction-dataset export/import: one JSON object per line with exactly the
//! keys `instruction`, `image` and `output`.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{decode_base64, encode_base64, CaseRecord};
use super::CaseStore;
use crate::parser::{render_sections, ParseMode, StructuredAssessment};
use crate::prompt;

const FIELDS: [&str; 3] = ["instruction", "image", "output"];
const DATA_URI_PREFIX: &str = "data:";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("case `{0}` has no annotation and cannot be exported")]
    UnannotatedRecord(String),
    #[error("case `{0}` not found")]
    UnknownCase(String),
    #[error("image for case `{0}` is unreadable")]
    ImageUnreadable(String),
    #[error("failed writing export: {0}")]
    SinkWriteFailure(#[source] io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("line {0}: malformed sample")]
    MalformedSample(usize),
    #[error("sample is missing field `{0}`")]
    MissingField(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Version of the instruction-dataset line format. Reported by the CLI, never
/// written into the dataset file itself.
pub const EXPORT_FORMAT_VERSION: &str = "instruction-jsonl/v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Store-relative path to the image file.
    #[default]
    Path,
    /// `data:<mime>;base64,<payload>` URI.
    Embedded,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    pub image_mode: ImageMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub image: String,
    pub output: String,
}

impl InstructionSample {
    /// Resolves the image reference to bytes; paths are relative to `base`.
    pub fn image_bytes(&self, base: &Path) -> io::Result<Vec<u8>> {
        if let Some(rest) = self.image.strip_prefix(DATA_URI_PREFIX) {
            let payload = rest
                .split_once(";base64,")
                .map(|(_, p)| p)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad data uri"))?;
            decode_base64(payload)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad base64"))
        } else {
            std::fs::read(base.join(&self.image))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub count: usize,
    pub bytes: u64,
}

/// Expected model answer for an annotated record, in the strict section format.
pub fn expected_output(record: &CaseRecord) -> Option<String> {
    let annotation = record.annotation.as_ref()?;
    let timeline = annotation
        .recovery_timeline
        .clone()
        .filter(|t| annotation.recovery_required && !t.trim().is_empty());
    let assessment = StructuredAssessment {
        source_model: format!("annotator:{}", annotation.annotator_id),
        waveform_pattern: annotation.observation.clone(),
        condition: annotation.condition.clone(),
        state: annotation.state,
        recovery_required: annotation.recovery_required,
        recovery_timeline: timeline,
        parse_mode: ParseMode::Strict,
    };
    Some(render_sections(&assessment))
}

pub fn export_instruction_dataset<W: Write>(
    store: &CaseStore,
    partition: &[String],
    options: ExportOptions,
    mut sink: W,
) -> Result<ExportSummary, ExportError> {
    // Resolve everything first so a bad id never leaves a half-written file.
    let mut samples = Vec::with_capacity(partition.len());
    for id in partition {
        let record = store.get(id).ok_or_else(|| ExportError::UnknownCase(id.clone()))?;
        let output =
            expected_output(&record).ok_or_else(|| ExportError::UnannotatedRecord(id.clone()))?;
        let image = match options.image_mode {
            ImageMode::Path => store
                .relative_image_path(&record)
                .map(|p| p.to_string_lossy().replace('\\', "/"))
                .ok_or_else(|| ExportError::ImageUnreadable(id.clone()))?,
            ImageMode::Embedded => {
                let bytes = record
                    .image
                    .bytes()
                    .map_err(|_| ExportError::ImageUnreadable(id.clone()))?;
                format!(
                    "{DATA_URI_PREFIX}{};base64,{}",
                    record.image.format.mime_type(),
                    encode_base64(&bytes)
                )
            }
        };
        samples.push(InstructionSample {
            instruction: prompt::instruction_text(&record),
            image,
            output,
        });
    }

    let mut written = 0u64;
    for sample in &samples {
        let mut line = serde_json::to_vec(sample).expect("sample serializes");
        line.push(b'\n');
        sink.write_all(&line).map_err(ExportError::SinkWriteFailure)?;
        written += line.len() as u64;
    }
    sink.flush().map_err(ExportError::SinkWriteFailure)?;
    Ok(ExportSummary { count: samples.len(), bytes: written })
}

pub fn import_instruction_dataset<R: BufRead>(src: R) -> Result<Vec<InstructionSample>, ImportError> {
    let mut samples = Vec::new();
    for (idx, line) in src.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let Ok(Value::Object(mut obj)) = serde_json::from_str::<Value>(&line) else {
            return Err(ImportError::MalformedSample(line_no));
        };
        let mut take = |name: &str| match obj.remove(name) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(ImportError::MalformedSample(line_no)),
            None => Err(ImportError::MissingField(name.to_string())),
        };
        let sample = InstructionSample {
            instruction: take(FIELDS[0])?,
            image: take(FIELDS[1])?,
            output: take(FIELDS[2])?,
        };
        if !obj.is_empty() {
            return Err(ImportError::MalformedSample(line_no));
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_store::testutil::annotated_payload;
    use crate::record_store::{sha256_hex, StateLabel};

    fn store_with(n: usize) -> (tempfile::TempDir, CaseStore, Vec<String>) {
        let dir = tempfile::tempdir().unwrap();
        let store = CaseStore::open(dir.path()).unwrap();
        let ids = (0..n)
            .map(|i| {
                let state = StateLabel::ALL[i % 4];
                store
                    .ingest_case(annotated_payload(Some(&format!("c{i}")), state))
                    .unwrap()
                    .case_id
            })
            .collect();
        (dir, store, ids)
    }

    #[test]
    fn three_records_three_samples() {
        let (_dir, store, ids) = store_with(3);
        let mut out = Vec::new();
        let summary =
            export_instruction_dataset(&store, &ids, ExportOptions::default(), &mut out).unwrap();
        assert_eq!(summary.count, 3);
        assert_eq!(summary.bytes, out.len() as u64);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        for line in text.lines() {
            let v: serde_json::Map<String, Value> = serde_json::from_str(line).unwrap();
            let mut keys: Vec<_> = v.keys().cloned().collect();
            keys.sort();
            assert_eq!(keys, ["image", "instruction", "output"]);
            assert!(v.values().all(|x| !x.as_str().unwrap().is_empty()));
        }
    }

    #[test]
    fn unannotated_case_is_rejected_before_writing() {
        let (_dir, store, mut ids) = store_with(2);
        let mut payload = annotated_payload(Some("bare"), StateLabel::Injury);
        payload.annotation = None;
        ids.push(store.ingest_case(payload).unwrap().case_id);
        let mut out = Vec::new();
        let err = export_instruction_dataset(&store, &ids, ExportOptions::default(), &mut out);
        assert!(matches!(err, Err(ExportError::UnannotatedRecord(id)) if id == "bare"));
        assert!(out.is_empty());
    }

    #[test]
    fn round_trip_both_image_modes() {
        let (dir, store, ids) = store_with(4);
        for mode in [ImageMode::Path, ImageMode::Embedded] {
            let mut out = Vec::new();
            export_instruction_dataset(&store, &ids, ExportOptions { image_mode: mode }, &mut out)
                .unwrap();
            let samples = import_instruction_dataset(out.as_slice()).unwrap();
            assert_eq!(samples.len(), ids.len());
            for (sample, id) in samples.iter().zip(&ids) {
                let record = store.get(id).unwrap();
                assert_eq!(sample.output, expected_output(&record).unwrap());
                assert_eq!(sha256_hex(&sample.image_bytes(dir.path()).unwrap()), record.image.checksum);
            }
            let mut again = Vec::new();
            for s in &samples {
                serde_json::to_writer(&mut again, s).unwrap();
                again.push(b'\n');
            }
            assert_eq!(again, out);
        }
    }

    #[test]
    fn import_edge_cases() {
        assert!(import_instruction_dataset(&b""[..]).unwrap().is_empty());
        let missing = br#"{"instruction":"a","image":"b"}"#;
        assert!(matches!(
            import_instruction_dataset(&missing[..]),
            Err(ImportError::MissingField(f)) if f == "output"
        ));
        let bad = b"{\"instruction\":\"a\",\"image\":\"b\",\"output\":\"c\"}\nnot json\n";
        assert!(matches!(import_instruction_dataset(&bad[..]), Err(ImportError::MalformedSample(2))));
        let extra = br#"{"instruction":"a","image":"b","output":"c","x":"d"}"#;
        assert!(matches!(import_instruction_dataset(&extra[..]), Err(ImportError::MalformedSample(1))));
    }
}
