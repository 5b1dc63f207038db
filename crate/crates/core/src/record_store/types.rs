use std::borrow::Cow;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StoreError;

pub const MIN_AGE: u32 = 5;
pub const MAX_AGE: u32 = 120;

/// Neuromuscular state assigned to a case, either by an expert or by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateLabel {
    Fatigue,
    Injury,
    Recovery,
    Normal,
}

impl StateLabel {
    pub const ALL: [StateLabel; 4] = [
        StateLabel::Fatigue,
        StateLabel::Injury,
        StateLabel::Recovery,
        StateLabel::Normal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::Fatigue => "fatigue",
            StateLabel::Injury => "injury",
            StateLabel::Recovery => "recovery",
            StateLabel::Normal => "normal",
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown state label `{0}`")]
pub struct UnknownStateLabel(pub String);

impl FromStr for StateLabel {
    type Err = UnknownStateLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        StateLabel::ALL
            .into_iter()
            .find(|label| label.as_str() == lower)
            .ok_or_else(|| UnknownStateLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AthleteMetadata {
    pub athlete_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub sport: String,
    #[serde(default)]
    pub training_context: String,
}

impl AthleteMetadata {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.athlete_id.trim().is_empty() {
            return Err(StoreError::InvalidMetadata("athlete_id".into()));
        }
        if let Some(age) = self.age {
            if !(MIN_AGE..=MAX_AGE).contains(&age) {
                return Err(StoreError::InvalidMetadata("age".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    const PNG_MAGIC: &'static [u8] = &[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    const JPEG_MAGIC: &'static [u8] = &[0xFF, 0xD8, 0xFF];

    pub fn sniff(bytes: &[u8]) -> Option<ImageFormat> {
        if bytes.starts_with(Self::PNG_MAGIC) {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(Self::JPEG_MAGIC) {
            Some(ImageFormat::Jpeg)
        } else {
            None
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }

    pub fn mime_type(self) -> &'static str {
        match self {
            ImageFormat::Png => "image/png",
            ImageFormat::Jpeg => "image/jpeg",
        }
    }
}

/// Where the bytes of a waveform image live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageContent {
    /// Base64 in serialized form.
    Embedded(#[serde(with = "base64_bytes")] Vec<u8>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveformImage {
    pub image_id: String,
    pub format: ImageFormat,
    pub width: u32,
    pub height: u32,
    pub checksum: String,
    pub content: ImageContent,
}

impl WaveformImage {
    /// Decodes the header of `bytes` and builds an embedded image. The declared
    /// format, when given, must agree with the magic bytes.
    pub fn from_bytes(
        image_id: impl Into<String>,
        bytes: Vec<u8>,
        declared: Option<ImageFormat>,
    ) -> Result<Self, StoreError> {
        let format = ImageFormat::sniff(&bytes).ok_or(StoreError::UnsupportedImage)?;
        if let Some(declared) = declared {
            if declared != format {
                return Err(StoreError::FormatMismatch { declared, actual: format });
            }
        }
        let (width, height) = image_dimensions(&bytes, format)?;
        Ok(WaveformImage {
            image_id: image_id.into(),
            format,
            width,
            height,
            checksum: sha256_hex(&bytes),
            content: ImageContent::Embedded(bytes),
        })
    }

    pub fn bytes(&self) -> std::io::Result<Cow<'_, [u8]>> {
        match &self.content {
            ImageContent::Embedded(bytes) => Ok(Cow::Borrowed(bytes)),
            ImageContent::File(path) => std::fs::read(path).map(Cow::Owned),
        }
    }

    pub fn file_path(&self) -> Option<&Path> {
        match &self.content {
            ImageContent::File(path) => Some(path),
            ImageContent::Embedded(_) => None,
        }
    }

    /// Re-reads the content and checks every image invariant.
    pub fn verify(&self) -> Result<(), StoreError> {
        let bytes = self.bytes().map_err(|_| StoreError::MissingImage)?;
        if sha256_hex(&bytes) != self.checksum {
            return Err(StoreError::ChecksumMismatch {
                declared: self.checksum.clone(),
                computed: sha256_hex(&bytes),
            });
        }
        match ImageFormat::sniff(&bytes) {
            Some(f) if f == self.format => {}
            Some(actual) => {
                return Err(StoreError::FormatMismatch { declared: self.format, actual })
            }
            None => return Err(StoreError::UnsupportedImage),
        }
        if self.width == 0 || self.height == 0 {
            return Err(StoreError::InvalidMetadata("image.dimensions".into()));
        }
        Ok(())
    }
}

fn image_dimensions(bytes: &[u8], format: ImageFormat) -> Result<(u32, u32), StoreError> {
    let fmt = match format {
        ImageFormat::Png => image::ImageFormat::Png,
        ImageFormat::Jpeg => image::ImageFormat::Jpeg,
    };
    let reader = image::ImageReader::with_format(std::io::Cursor::new(bytes), fmt);
    let (w, h) = reader
        .into_dimensions()
        .map_err(|_| StoreError::UnsupportedImage)?;
    if w == 0 || h == 0 {
        return Err(StoreError::InvalidMetadata("image.dimensions".into()));
    }
    Ok((w, h))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalAnnotation {
    pub observation: String,
    pub condition: String,
    pub state: StateLabel,
    pub recovery_required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_timeline: Option<String>,
    pub annotator_id: String,
    pub annotated_at: DateTime<Utc>,
}

impl ClinicalAnnotation {
    pub fn validate(&self) -> Result<(), StoreError> {
        let has_timeline = self
            .recovery_timeline
            .as_deref()
            .is_some_and(|t| !t.trim().is_empty());
        if !self.recovery_required && has_timeline {
            return Err(StoreError::InvalidMetadata("annotation.recovery_timeline".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub metadata: AthleteMetadata,
    pub image: WaveformImage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<ClinicalAnnotation>,
    pub created_at: DateTime<Utc>,
}

impl CaseRecord {
    /// Checks every record invariant, including a re-hash of the image bytes.
    pub fn validate(&self) -> Result<(), StoreError> {
        validate_case_id(&self.case_id)?;
        self.metadata.validate()?;
        self.image.verify()?;
        if let Some(annotation) = &self.annotation {
            annotation.validate()?;
        }
        Ok(())
    }
}

/// Case ids double as file names in the store.
pub fn validate_case_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidMetadata("case_id".into()))
    }
}

pub(crate) mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn encode_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_base64(text: &str) -> Option<Vec<u8>> {
    base64::engine::general_purpose::STANDARD.decode(text.as_bytes()).ok()
}
