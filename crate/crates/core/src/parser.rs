//! Raw model text to [`StructuredAssessment`].
//!
//! Outputs carrying all four labelled sections (`WAVEFORM:`, `CONDITION:`,
//! `STATE:`, `RECOVERY:`) take the strict path and are copied verbatim. Anything
//! else goes through an ordered keyword ruleset (v1):
//!
//! 1. recovery negation (`no recovery ... required`, `cleared`, `regular training`) -> normal
//! 2. `fatigue` -> fatigue
//! 3. `injury` / `strain` / `tear` -> injury
//! 4. `recovery` / `rehabilitation` / `normalization` -> recovery
//!
//! First match wins. The negation rule sits first so that "a mild strain, no
//! recovery was required" is read as a cleared athlete rather than an injury.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::record_store::StateLabel;

pub const LENIENT_RULESET_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredAssessment {
    pub source_model: String,
    pub waveform_pattern: String,
    pub condition: String,
    pub state: StateLabel,
    pub recovery_required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_timeline: Option<String>,
    pub parse_mode: ParseMode,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unparseable model output: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Waveform,
    Condition,
    State,
    Recovery,
    Rationale,
}

impl Section {
    fn from_label(label: &str) -> Section {
        match label.to_ascii_uppercase().as_str() {
            "WAVEFORM" => Section::Waveform,
            "CONDITION" => Section::Condition,
            "STATE" => Section::State,
            "RECOVERY" => Section::Recovery,
            _ => Section::Rationale,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

static SECTION_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\s#>*_-]*(WAVEFORM|CONDITION|STATE|RECOVERY|RATIONALE)[*_\s]*:[*_]*\s*(.*)$")
        .unwrap()
});

static NEGATED_RECOVERY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\bno\s+(?:further\s+|formal\s+)?(?:recovery|rehabilitation|rehab)\b[^.!?\n]*\brequired\b|\b(?:recovery|rehabilitation)\s+(?:is|was)\s+not\s+(?:required|needed)\b|\bcleared\b|\bregular\s+training\b",
    )
    .unwrap()
});
static FATIGUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bfatigue[ds]?\b").unwrap());
static INJURY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:injury|injuries|injured|strain|strained|tear|torn)\b").unwrap()
});
static RECOVERY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:recovery|recovering|rehabilitation|rehab|normali[sz]ation)\b").unwrap()
});
static REHAB_NEED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:recovery|rehabilitation|rehab)\b").unwrap());
static WAVEFORM_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:amplitude|latency|h-reflex|h reflex|waveform|m-wave|reflex)").unwrap()
});
static TIMELINE_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b\d+\s*(?:(?:-|–|to)\s*\d+\s*)?(?:day|week|month)s?\b").unwrap()
});

fn split_sections(raw: &str) -> [Option<String>; 5] {
    let mut found: [Option<Vec<&str>>; 5] = Default::default();
    let mut current: Option<Section> = None;
    for line in raw.lines() {
        if let Some(caps) = SECTION_LINE.captures(line) {
            let section = Section::from_label(&caps[1]);
            let slot = &mut found[section.index()];
            if slot.is_none() {
                *slot = Some(vec![caps.get(2).map_or("", |m| m.as_str())]);
                current = Some(section);
            } else {
                // Repeated label: ignore its body.
                current = None;
            }
        } else if let Some(section) = current {
            if let Some(lines) = &mut found[section.index()] {
                lines.push(line);
            }
        }
    }
    found.map(|lines| lines.map(|l| l.join("\n").trim().to_string()))
}

fn parse_state_token(text: &str) -> Option<StateLabel> {
    let token = text
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_ascii_alphabetic());
    token.parse().ok()
}

/// Interprets a RECOVERY section body: `none` / `not required` / `no` mean no
/// recovery; a bare `required` means recovery without a stated timeline.
fn parse_recovery(text: &str) -> (bool, Option<String>) {
    let lower = text.trim().trim_end_matches('.').trim().to_ascii_lowercase();
    if lower.is_empty()
        || lower == "no"
        || lower.starts_with("none")
        || lower.starts_with("not required")
        || lower.starts_with("no recovery")
        || lower == "n/a"
    {
        (false, None)
    } else if lower == "required" {
        (true, None)
    } else {
        (true, Some(text.trim().to_string()))
    }
}

/// Serializes an assessment in the strict four-section format.
pub fn render_sections(a: &StructuredAssessment) -> String {
    let recovery = match (&a.recovery_timeline, a.recovery_required) {
        (_, false) => "none",
        (Some(t), true) => t.as_str(),
        (None, true) => "required",
    };
    format!(
        "WAVEFORM: {}\nCONDITION: {}\nSTATE: {}\nRECOVERY: {}",
        a.waveform_pattern, a.condition, a.state, recovery
    )
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = c == '\n'
            || (matches!(c, '.' | '!' | '?')
                && chars.peek().is_none_or(|(_, next)| next.is_whitespace()));
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn strict(sections: &[Option<String>; 5], source_model: &str) -> Result<StructuredAssessment, ParseError> {
    let get = |s: Section| sections[s.index()].clone().unwrap_or_default();
    let state_text = get(Section::State);
    let state = parse_state_token(&state_text).ok_or_else(|| {
        ParseError::Unparseable(format!("STATE section `{state_text}` is not a known label"))
    })?;
    let (recovery_required, recovery_timeline) = parse_recovery(&get(Section::Recovery));
    Ok(StructuredAssessment {
        source_model: source_model.to_string(),
        waveform_pattern: get(Section::Waveform),
        condition: get(Section::Condition),
        state,
        recovery_required,
        recovery_timeline,
        parse_mode: ParseMode::Strict,
    })
}

fn lenient(raw: &str, source_model: &str) -> Result<StructuredAssessment, ParseError> {
    let negated = NEGATED_RECOVERY.find(raw);
    let rules: [(&Regex, StateLabel); 3] = [
        (&FATIGUE, StateLabel::Fatigue),
        (&INJURY, StateLabel::Injury),
        (&RECOVERY, StateLabel::Recovery),
    ];
    let (state, hit) = match negated {
        Some(m) => (StateLabel::Normal, m),
        None => rules
            .iter()
            .find_map(|(re, label)| re.find(raw).map(|m| (*label, m)))
            .ok_or_else(|| ParseError::Unparseable("no state keyword found".into()))?,
    };

    let sents = sentences(raw);
    let sentence_at = |offset: usize| {
        sents
            .iter()
            .find(|s| {
                let start = s.as_ptr() as usize - raw.as_ptr() as usize;
                (start..start + s.len()).contains(&offset)
            })
            .map(|s| s.to_string())
            .unwrap_or_default()
    };
    let condition = sentence_at(hit.start());
    let waveform_pattern = sents
        .iter()
        .find(|s| WAVEFORM_CUE.is_match(s))
        .or(sents.first())
        .map(|s| s.to_string())
        .unwrap_or_default();

    let recovery_required = negated.is_none()
        && (matches!(state, StateLabel::Injury | StateLabel::Recovery) || REHAB_NEED.is_match(raw));
    let recovery_timeline = recovery_required
        .then(|| sents.iter().find(|s| TIMELINE_CUE.is_match(s)).map(|s| s.to_string()))
        .flatten();

    Ok(StructuredAssessment {
        source_model: source_model.to_string(),
        waveform_pattern,
        condition,
        state,
        recovery_required,
        recovery_timeline,
        parse_mode: ParseMode::Lenient,
    })
}

pub fn parse_assessment(raw: &str, source_model: &str) -> Result<StructuredAssessment, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Unparseable("empty output".into()));
    }
    let sections = split_sections(raw);
    if sections[..4].iter().all(Option::is_some) {
        strict(&sections, source_model)
    } else {
        lenient(raw, source_model)
    }
}

/// Parses a reasoning-model answer: the four sections plus `RATIONALE:`.
/// Strict mode requires all five with a non-empty rationale; otherwise the
/// assessment is marked lenient and the rationale may be empty.
pub fn parse_consensus(raw: &str) -> Result<(StructuredAssessment, String), ParseError> {
    let mut assessment = parse_assessment(raw, "")?;
    let rationale = split_sections(raw)[Section::Rationale.index()]
        .clone()
        .unwrap_or_default();
    if rationale.is_empty() {
        assessment.parse_mode = ParseMode::Lenient;
    }
    Ok((assessment, rationale))
}
