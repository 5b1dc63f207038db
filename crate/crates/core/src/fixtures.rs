//! Synthetic cases and images for tests, demos and the acceptance suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};

use crate::gateway::{ModelEndpoint, RetryPolicy};
use crate::mock_server::{MockScript, MockServer};
use crate::parser::parse_assessment;
use crate::orchestrator::{PipelineConfig, ReasonerSettings, REASONER_KEY};
use crate::prompt::{ModelProfile, TEMPLATE_VERSION};
use crate::record_store::{
    AthleteMetadata, CasePayload, ClinicalAnnotation, ImagePayload, ImageSource, StateLabel,
};

/// Encodes a small grayscale PNG with a deterministic sawtooth pattern.
pub fn png_bytes(width: u32, height: u32) -> Vec<u8> {
    let img = image::GrayImage::from_fn(width, height, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encode");
    out.into_inner()
}

/// A valid payload for a 24-year-old soccer player in a recovery phase,
/// annotated with `state`.
pub fn annotated_payload(case_id: Option<&str>, state: StateLabel) -> CasePayload {
    let seed = case_id.map_or(0, |id| id.bytes().map(u32::from).sum::<u32>());
    let recovery_required = matches!(state, StateLabel::Injury | StateLabel::Recovery);
    CasePayload {
        case_id: case_id.map(str::to_string),
        metadata: AthleteMetadata {
            athlete_id: format!("ath-{seed:04}"),
            age: Some(24),
            gender: "female".into(),
            sport: "soccer".into(),
            training_context: "recovery phase".into(),
        },
        image: Some(ImagePayload {
            image_id: None,
            format: None,
            checksum: None,
            source: ImageSource::Data(png_bytes(16 + seed % 7, 8)),
        }),
        annotation: Some(ClinicalAnnotation {
            observation: match state {
                StateLabel::Injury => "substantially reduced amplitude and prolonged latency".into(),
                StateLabel::Recovery => "gradual normalization of H-reflex".into(),
                StateLabel::Fatigue => "transiently depressed H-reflex amplitude".into(),
                StateLabel::Normal => "H-reflex within normal range".into(),
            },
            condition: match state {
                StateLabel::Injury | StateLabel::Recovery => "recent hamstring injury".into(),
                StateLabel::Fatigue => "accumulated training fatigue".into(),
                StateLabel::Normal => "mild muscle strain".into(),
            },
            state,
            recovery_required,
            recovery_timeline: recovery_required.then(|| "structured rehab, 4-6 weeks".to_string()),
            annotator_id: "expert-1".into(),
            annotated_at: Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(),
        }),
        created_at: Some(Utc.with_ymd_and_hms(2025, 3, 2, 10, 30, 0).unwrap()),
    }
}

/// A model answer in the strict section format.
pub fn strict_answer(state: StateLabel) -> String {
    let recovery = match state {
        StateLabel::Injury | StateLabel::Recovery => "structured rehab, 4-6 weeks",
        StateLabel::Fatigue | StateLabel::Normal => "none",
    };
    format!(
        "WAVEFORM: synthetic waveform pattern for {state}\nCONDITION: synthetic condition for {state}\nSTATE: {state}\nRECOVERY: {recovery}\n"
    )
}

/// A reasoning-model answer: the strict sections plus a rationale.
pub fn consensus_answer(state: StateLabel, rationale: &str) -> String {
    format!("{}RATIONALE: {rationale}\n", strict_answer(state))
}

/// Three consortium profiles in priority order.
pub fn default_profiles() -> Vec<ModelProfile> {
    vec![
        ModelProfile::new("pixtral", "Pixtral-Vision", 1),
        ModelProfile::new("llama-vision", "Llama-Vision", 2),
        ModelProfile::new("qwen2-vl", "Qwen2-VL", 3),
    ]
}

/// Mock endpoints for a consortium plus the reasoner.
pub struct MockConsortium {
    pub models: Vec<(ModelProfile, MockServer)>,
    pub reasoner: MockServer,
}

impl MockConsortium {
    /// Starts one mock per profile with the matching script, and a reasoner.
    pub async fn start(
        profiles: Vec<ModelProfile>,
        scripts: Vec<MockScript>,
        reasoner: MockScript,
    ) -> std::io::Result<Self> {
        assert_eq!(profiles.len(), scripts.len(), "one script per profile");
        let mut models = Vec::with_capacity(profiles.len());
        for (profile, script) in profiles.into_iter().zip(scripts) {
            models.push((profile, MockServer::start_local(script).await?));
        }
        Ok(MockConsortium { models, reasoner: MockServer::start_local(reasoner).await? })
    }

    /// Pipeline config pointing every profile at its mock. No retries.
    pub fn config(&self, store_path: &Path, timeout_ms: u64) -> PipelineConfig {
        let mut endpoints = BTreeMap::new();
        for (profile, server) in &self.models {
            endpoints.insert(
                profile.model_id.clone(),
                ModelEndpoint::new(server.chat_url(), format!("{}-hreflex", profile.model_id), timeout_ms)
                    .with_retry(RetryPolicy::no_retry()),
            );
        }
        endpoints.insert(
            REASONER_KEY.to_string(),
            ModelEndpoint::new(self.reasoner.chat_url(), "gpt-oss", timeout_ms).with_retry(RetryPolicy::no_retry()),
        );
        PipelineConfig {
            store_path: store_path.to_path_buf(),
            min_quorum: 1,
            template_version: TEMPLATE_VERSION.to_string(),
            template_dir: None,
            parallelism: None,
            include_history: false,
            reasoner: ReasonerSettings::default(),
            profiles: self.models.iter().map(|(p, _)| p.clone()).collect(),
            endpoints,
        }
    }

    pub async fn shutdown(self) {
        for (_, server) in self.models {
            server.shutdown().await;
        }
        self.reasoner.shutdown().await;
    }
}

/// Parser corpus shipped with the crate (`fixtures/parser`).
pub fn parser_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("parser")
}

/// One `<name>.txt` / `<name>.expected.json` pair.
#[derive(Debug, Clone)]
pub struct ParserFixture {
    pub name: String,
    pub raw: String,
    pub expected: serde_json::Value,
}

/// Loads every fixture pair in `dir`, sorted by name.
pub fn load_parser_corpus(dir: &Path) -> std::io::Result<Vec<ParserFixture>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".txt")).map(str::to_string))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let raw = std::fs::read_to_string(dir.join(format!("{name}.txt")))?;
            let expected_text = std::fs::read_to_string(dir.join(format!("{name}.expected.json")))?;
            let expected = serde_json::from_str(&expected_text).map_err(std::io::Error::other)?;
            Ok(ParserFixture { name, raw, expected })
        })
        .collect()
}

impl ParserFixture {
    /// Parses the raw text and compares against the expectation; the error
    /// names the first mismatching field.
    pub fn check(&self) -> Result<(), String> {
        let parsed = parse_assessment(&self.raw, &self.name);
        let exp = &self.expected;
        if exp.get("error").is_some() {
            return match parsed {
                Err(_) => Ok(()),
                Ok(a) => Err(format!("expected a parse error, got state {}", a.state)),
            };
        }
        let a = parsed.map_err(|e| e.to_string())?;
        let want = |key: &str| exp.get(key).cloned().unwrap_or(serde_json::Value::Null);
        let got = serde_json::to_value(&a).expect("assessment serializes");
        for key in ["state", "recovery_required", "parse_mode"] {
            if got[key] != want(key) {
                return Err(format!("{key}: expected {}, got {}", want(key), got[key]));
            }
        }
        if let Some(timeline) = exp.get("recovery_timeline") {
            let got_timeline = got.get("recovery_timeline").cloned().unwrap_or(serde_json::Value::Null);
            if &got_timeline != timeline {
                return Err(format!("recovery_timeline: expected {timeline}, got {got_timeline}"));
            }
        }
        for (key, field) in [("waveform_contains", &a.waveform_pattern), ("condition_contains", &a.condition)] {
            if let Some(needle) = exp.get(key).and_then(|v| v.as_str()) {
                if !field.contains(needle) {
                    return Err(format!("{key}: `{needle}` not in `{field}`"));
                }
            }
        }
        Ok(())
    }
}
