//! Prompt rendering for consortium models and the reasoning model.
//!
//! Templates are plain text with `{{name}}` placeholders. A line whose
//! placeholders all render empty is dropped, so absent metadata never leaves a
//! dangling `Age:` line behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::parser::{render_sections, StructuredAssessment};
use crate::record_store::{CaseRecord, StateLabel, WaveformImage};

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("case `{0}` has no readable image")]
    MissingImage(String),
    #[error("consensus prompt needs at least one assessment")]
    EmptyAssessments,
    #[error("{assessments} assessments but {raws} raw outputs")]
    LengthMismatch { assessments: usize, raws: usize },
    #[error("template `{template}` references unknown placeholder `{name}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("failed to load template `{0}`: {1}")]
    Load(String, #[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    Generic,
    #[default]
    SectionStrict,
}

fn default_max_tokens() -> u32 {
    512
}

fn default_priority() -> i32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub display_name: String,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Tie-break rank; lower wins.
    #[serde(default = "default_priority")]
    pub priority: i32,
}

impl ModelProfile {
    pub fn new(model_id: impl Into<String>, display_name: impl Into<String>, priority: i32) -> Self {
        ModelProfile {
            model_id: model_id.into(),
            display_name: display_name.into(),
            prompt_style: PromptStyle::SectionStrict,
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            priority,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id must be non-empty".into());
        }
        if self.max_tokens == 0 {
            return Err(format!("profile `{}`: max_tokens must be > 0", self.model_id));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("profile `{}`: temperature must be in [0, 2]", self.model_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<WaveformImage>,
    pub format_directive: String,
    pub template_version: String,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptOptions {
    /// Adds annotation-derived history to VLM prompts. Off by default: during
    /// evaluation it leaks the label into the prompt.
    pub include_history: bool,
}

#[derive(Debug, Clone)]
struct Templates {
    vlm_system: String,
    vlm_user: String,
    vlm_user_generic: String,
    instruction: String,
    consensus_system: String,
    consensus_user: String,
}

const TEMPLATE_FILES: [&str; 6] = [
    "vlm_system.txt",
    "vlm_user.txt",
    "vlm_user_generic.txt",
    "instruction.txt",
    "consensus_system.txt",
    "consensus_user.txt",
];

impl Templates {
    fn builtin() -> Self {
        Templates {
            vlm_system: include_str!("../templates/vlm_system.txt").into(),
            vlm_user: include_str!("../templates/vlm_user.txt").into(),
            vlm_user_generic: include_str!("../templates/vlm_user_generic.txt").into(),
            instruction: include_str!("../templates/instruction.txt").into(),
            consensus_system: include_str!("../templates/consensus_system.txt").into(),
            consensus_user: include_str!("../templates/consensus_user.txt").into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptEngine {
    templates: Templates,
    version: String,
    options: PromptOptions,
}

impl Default for PromptEngine {
    fn default() -> Self {
        Self::builtin()
    }
}

/// The four section labels, in order, with the STATE line enumerating every label.
pub fn section_directive() -> String {
    let states: Vec<&str> = StateLabel::ALL.iter().map(|s| s.as_str()).collect();
    format!(
        "Respond using exactly these labeled sections, in this order:\n\
         WAVEFORM: <key waveform pattern>\n\
         CONDITION: <identified condition>\n\
         STATE: <one of: {}>\n\
         RECOVERY: <required recovery and timeline, or \"none\">",
        states.join(", ")
    )
}

fn consensus_directive() -> String {
    format!(
        "{}\nRATIONALE: <why this is the final assessment, referring to the candidates by number>",
        section_directive()
    )
}

impl PromptEngine {
    pub fn builtin() -> Self {
        PromptEngine {
            templates: Templates::builtin(),
            version: TEMPLATE_VERSION.to_string(),
            options: PromptOptions::default(),
        }
    }

    /// Loads templates from `dir`; any file missing there falls back to the built-in one.
    pub fn from_dir(dir: &Path, version: impl Into<String>) -> Result<Self, PromptError> {
        let mut t = Templates::builtin();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Load(name.into(), e))?;
            let slot = match name {
                "vlm_system.txt" => &mut t.vlm_system,
                "vlm_user.txt" => &mut t.vlm_user,
                "vlm_user_generic.txt" => &mut t.vlm_user_generic,
                "instruction.txt" => &mut t.instruction,
                "consensus_system.txt" => &mut t.consensus_system,
                _ => &mut t.consensus_user,
            };
            *slot = text;
        }
        Ok(PromptEngine { templates: t, version: version.into(), options: PromptOptions::default() })
    }

    pub fn with_options(mut self, options: PromptOptions) -> Self {
        self.options = options;
        self
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn render_vlm_prompt(
        &self,
        case: &CaseRecord,
        profile: &ModelProfile,
    ) -> Result<RenderedPrompt, PromptError> {
        if case.image.bytes().is_err() {
            return Err(PromptError::MissingImage(case.case_id.clone()));
        }
        let directive = section_directive();
        let mut vars = metadata_vars(case);
        vars.insert("sections", directive.clone());
        let history = if self.options.include_history {
            case.annotation
                .as_ref()
                .map(|a| {
                    let mut h = a.condition.clone();
                    if let Some(t) = a.recovery_timeline.as_deref().filter(|t| !t.is_empty()) {
                        let _ = write!(h, "; recovery timeline: {t}");
                    }
                    h
                })
                .unwrap_or_default()
        } else {
            String::new()
        };
        vars.insert("history", history);

        let (name, template) = match profile.prompt_style {
            PromptStyle::SectionStrict => ("vlm_user", &self.templates.vlm_user),
            PromptStyle::Generic => ("vlm_user_generic", &self.templates.vlm_user_generic),
        };
        Ok(RenderedPrompt {
            system_text: render_template("vlm_system", &self.templates.vlm_system, &vars)?,
            user_text: render_template(name, template, &vars)?,
            image: Some(case.image.clone()),
            format_directive: directive,
            template_version: self.version.clone(),
            sampling: Sampling { max_tokens: profile.max_tokens, temperature: profile.temperature },
        })
    }

    /// Builds the adjudication prompt. Candidates keep their input order and are
    /// numbered from 1; `profiles` supplies display names (the model id is used
    /// when no profile matches).
    pub fn render_consensus_prompt(
        &self,
        case: &CaseRecord,
        assessments: &[StructuredAssessment],
        raws: &[String],
        profiles: &[ModelProfile],
        sampling: Sampling,
    ) -> Result<RenderedPrompt, PromptError> {
        if assessments.is_empty() {
            return Err(PromptError::EmptyAssessments);
        }
        if assessments.len() != raws.len() {
            return Err(PromptError::LengthMismatch {
                assessments: assessments.len(),
                raws: raws.len(),
            });
        }
        let mut candidates = String::new();
        for (i, (a, raw)) in assessments.iter().zip(raws).enumerate() {
            let name = profiles
                .iter()
                .find(|p| p.model_id == a.source_model)
                .map_or(a.source_model.as_str(), |p| p.display_name.as_str());
            if i > 0 {
                candidates.push_str("\n\n");
            }
            let _ = write!(
                candidates,
                "--- Candidate {}: {} ---\nStructured:\n{}\nRaw output:\n<<<\n{}\n>>>",
                i + 1,
                name,
                render_sections(a),
                raw.trim_end()
            );
        }

        let directive = consensus_directive();
        let mut vars = metadata_vars(case);
        vars.insert("candidate_count", assessments.len().to_string());
        vars.insert("candidates", candidates);
        vars.insert("sections", directive.clone());
        Ok(RenderedPrompt {
            system_text: render_template("consensus_system", &self.templates.consensus_system, &vars)?,
            user_text: render_template("consensus_user", &self.templates.consensus_user, &vars)?,
            image: None,
            format_directive: directive,
            template_version: self.version.clone(),
            sampling,
        })
    }

    /// The `instruction` field of an exported training sample.
    pub fn instruction_text(&self, case: &CaseRecord) -> String {
        let mut vars = metadata_vars(case);
        vars.insert("sections", section_directive());
        render_template("instruction", &self.templates.instruction, &vars)
            .expect("built-in instruction template is valid")
    }
}

/// Instruction text using the built-in templates.
pub fn instruction_text(case: &CaseRecord) -> String {
    PromptEngine::builtin().instruction_text(case)
}

fn metadata_vars(case: &CaseRecord) -> BTreeMap<&'static str, String> {
    let m = &case.metadata;
    BTreeMap::from([
        ("case_id", case.case_id.clone()),
        ("athlete_id", m.athlete_id.clone()),
        ("age", m.age.map(|a| a.to_string()).unwrap_or_default()),
        ("gender", m.gender.trim().to_string()),
        ("sport", m.sport.trim().to_string()),
        ("training_context", m.training_context.trim().to_string()),
    ])
}

/// Substitutes `{{name}}` placeholders. Lines whose placeholders are all empty
/// are removed; a trailing newline in the template is not reproduced.
pub fn render_template(
    template_name: &str,
    template: &str,
    vars: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let mut lines = Vec::new();
    for line in template.trim_end_matches('\n').split('\n') {
        let mut out = String::with_capacity(line.len());
        let mut rest = line;
        let mut placeholders = 0;
        let mut non_empty = 0;
        while let Some(open) = rest.find("{{") {
            let Some(close) = rest[open..].find("}}") else { break };
            let name = rest[open + 2..open + close].trim();
            let value = vars.get(name).ok_or_else(|| PromptError::UnknownPlaceholder {
                template: template_name.to_string(),
                name: name.to_string(),
            })?;
            placeholders += 1;
            if !value.is_empty() {
                non_empty += 1;
            }
            out.push_str(&rest[..open]);
            out.push_str(value);
            rest = &rest[open + close + 2..];
        }
        out.push_str(rest);
        if placeholders == 0 || non_empty > 0 {
            lines.push(out);
        }
    }
    Ok(lines.join("\n"))
}
