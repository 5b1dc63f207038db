//! Consortium aggregation and adjudication.
//!
//! Agreement is the fraction of unordered assessment pairs that share a state.
//! The reasoning model gets the final word; when it is unreachable or answers
//! unparseably, a plurality vote with priority tie-breaks stands in.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::{Gateway, InferenceResult, InferenceStatus, ModelEndpoint};
use crate::parser::{parse_assessment, parse_consensus, StructuredAssessment};
use crate::prompt::{ModelProfile, PromptEngine, Sampling};
use crate::record_store::{CaseRecord, StateLabel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("empty input list")]
    EmptyList,
    #[error("no successful assessments to build a consensus from")]
    NoAssessments,
}

/// Plurality outcome over state labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Majority {
    Winner(StateLabel),
    Tie,
}

impl fmt::Display for Majority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Majority::Winner(s) => f.write_str(s.as_str()),
            Majority::Tie => f.write_str("tie"),
        }
    }
}

impl From<Majority> for String {
    fn from(m: Majority) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Majority {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s == "tie" {
            Ok(Majority::Tie)
        } else {
            s.parse().map(Majority::Winner).map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    ConnectionError,
    ProtocolError,
    EmptyCompletion,
    /// The model answered but no state could be extracted.
    Unparseable,
}

impl FailureKind {
    fn from_status(status: InferenceStatus) -> Option<FailureKind> {
        match status {
            InferenceStatus::Ok => None,
            InferenceStatus::Timeout => Some(FailureKind::Timeout),
            InferenceStatus::ConnectionError => Some(FailureKind::ConnectionError),
            InferenceStatus::ProtocolError => Some(FailureKind::ProtocolError),
            InferenceStatus::EmptyCompletion => Some(FailureKind::EmptyCompletion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFailure {
    pub model_id: String,
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsortiumReport {
    pub case_id: String,
    pub assessments: Vec<StructuredAssessment>,
    /// Raw completions, aligned index-wise with `assessments`.
    pub raw_outputs: Vec<String>,
    pub failures: Vec<ModelFailure>,
    pub agreement_score: f64,
    pub state_majority: Majority,
}

impl ConsortiumReport {
    /// Parses every successful result; transport failures and unparseable
    /// answers land in `failures`. Each result appears exactly once.
    pub fn from_results(case_id: impl Into<String>, results: &[InferenceResult]) -> Self {
        let mut assessments = Vec::new();
        let mut raw_outputs = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            if let Some(kind) = FailureKind::from_status(r.status) {
                failures.push(ModelFailure { model_id: r.model_id.clone(), kind, detail: r.detail.clone() });
                continue;
            }
            match parse_assessment(&r.raw_text, &r.model_id) {
                Ok(a) => {
                    assessments.push(a);
                    raw_outputs.push(r.raw_text.clone());
                }
                Err(e) => failures.push(ModelFailure {
                    model_id: r.model_id.clone(),
                    kind: FailureKind::Unparseable,
                    detail: Some(e.to_string()),
                }),
            }
        }
        Self::new(case_id, assessments, raw_outputs, failures)
    }

    pub fn new(
        case_id: impl Into<String>,
        assessments: Vec<StructuredAssessment>,
        raw_outputs: Vec<String>,
        failures: Vec<ModelFailure>,
    ) -> Self {
        let agreement_score = compute_agreement(&assessments).unwrap_or(0.0);
        let states: Vec<StateLabel> = assessments.iter().map(|a| a.state).collect();
        let state_majority = majority_vote(&states).unwrap_or(Majority::Tie);
        ConsortiumReport {
            case_id: case_id.into(),
            assessments,
            raw_outputs,
            failures,
            agreement_score,
            state_majority,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMethod {
    Reasoned,
    VoteFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusAssessment {
    #[serde(flatten)]
    pub final_assessment: StructuredAssessment,
    pub rationale: String,
    pub method: ConsensusMethod,
    pub supporting_models: Vec<String>,
    /// Final state is not among the candidate states.
    pub override_flag: bool,
    /// At least one consortium model failed.
    pub degraded: bool,
    /// Status of the reasoning call when it was attempted and did not succeed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoner_failure: Option<String>,
}

/// Fraction of unordered pairs with equal states; 1.0 for a single assessment.
pub fn compute_agreement(assessments: &[StructuredAssessment]) -> Result<f64, ConsensusError> {
    let states: Vec<StateLabel> = assessments.iter().map(|a| a.state).collect();
    state_agreement(&states)
}

pub fn state_agreement(states: &[StateLabel]) -> Result<f64, ConsensusError> {
    match states.len() {
        0 => Err(ConsensusError::EmptyList),
        1 => Ok(1.0),
        n => {
            let mut counts = [0u64; 4];
            for s in states {
                counts[*s as usize] += 1;
            }
            let agreeing: u64 = counts.iter().map(|c| c * c.saturating_sub(1) / 2).sum();
            let pairs = (n as u64) * (n as u64 - 1) / 2;
            Ok(agreeing as f64 / pairs as f64)
        }
    }
}

fn tally(values: &[StateLabel]) -> BTreeMap<StateLabel, usize> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(*v).or_insert(0) += 1;
    }
    counts
}

/// Strict plurality winner, or `Tie` when the top count is shared.
pub fn majority_vote(values: &[StateLabel]) -> Result<Majority, ConsensusError> {
    let counts = tally(values);
    let top = *counts.values().max().ok_or(ConsensusError::EmptyList)?;
    let mut leaders = counts.iter().filter(|(_, c)| **c == top);
    let first = leaders.next().map(|(s, _)| *s).expect("max exists");
    Ok(if leaders.next().is_some() { Majority::Tie } else { Majority::Winner(first) })
}

fn priority_of(profiles: &[ModelProfile], model_id: &str) -> i64 {
    profiles
        .iter()
        .find(|p| p.model_id == model_id)
        .map_or(i64::MAX, |p| i64::from(p.priority))
}

/// Vote-based consensus. A tie goes to the state held by the
/// highest-priority (lowest `priority` value) model among the tied states;
/// the winning state's highest-priority assessment supplies the other fields.
pub fn fallback_consensus(
    report: &ConsortiumReport,
    profiles: &[ModelProfile],
) -> Result<ConsensusAssessment, ConsensusError> {
    let assessments = &report.assessments;
    if assessments.is_empty() {
        return Err(ConsensusError::NoAssessments);
    }
    let states: Vec<StateLabel> = assessments.iter().map(|a| a.state).collect();
    let counts = tally(&states);
    let majority = majority_vote(&states)?;
    let total = assessments.len();

    // Lowest priority value first, input order breaks remaining ties.
    let ranked = |filter: &dyn Fn(&StructuredAssessment) -> bool| {
        assessments
            .iter()
            .enumerate()
            .filter(|(_, a)| filter(a))
            .min_by_key(|(i, a)| (priority_of(profiles, &a.source_model), *i))
            .map(|(_, a)| a)
    };
    let winner = match majority {
        Majority::Winner(s) => s,
        Majority::Tie => {
            let top = counts.values().copied().max().unwrap_or(0);
            let tied: Vec<StateLabel> =
                counts.iter().filter(|(_, c)| **c == top).map(|(s, _)| *s).collect();
            ranked(&|a| tied.contains(&a.state)).expect("tied states have holders").state
        }
    };
    let representative = ranked(&|a| a.state == winner).expect("winner has holders");

    let mut summary: Vec<(StateLabel, usize)> = counts.into_iter().collect();
    summary.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let parts: Vec<String> = summary
        .iter()
        .map(|(state, count)| {
            let models: Vec<&str> = assessments
                .iter()
                .filter(|a| a.state == *state)
                .map(|a| a.source_model.as_str())
                .collect();
            format!("{state} {count}/{total} ({})", models.join(", "))
        })
        .collect();
    let mut rationale = format!("Majority vote over {total} assessments: {}.", parts.join("; "));
    if majority == Majority::Tie {
        rationale.push_str(&format!(
            " Tie resolved in favour of {winner} by model priority ({}).",
            representative.source_model
        ));
    }

    Ok(ConsensusAssessment {
        final_assessment: representative.clone(),
        rationale,
        method: ConsensusMethod::VoteFallback,
        supporting_models: assessments
            .iter()
            .filter(|a| a.state == winner)
            .map(|a| a.source_model.clone())
            .collect(),
        override_flag: false,
        degraded: !report.failures.is_empty(),
        reasoner_failure: None,
    })
}

/// Adjudicates a consortium report through the reasoning model.
#[derive(Debug, Clone)]
pub struct ConsensusEngine {
    pub gateway: Gateway,
    pub prompts: PromptEngine,
    pub profiles: Vec<ModelProfile>,
    pub reasoner_sampling: Sampling,
}

impl ConsensusEngine {
    pub fn new(gateway: Gateway, prompts: PromptEngine, profiles: Vec<ModelProfile>) -> Self {
        ConsensusEngine {
            gateway,
            prompts,
            profiles,
            reasoner_sampling: Sampling { max_tokens: 1024, temperature: 0.0 },
        }
    }

    /// Queries the reasoning endpoint with the rendered consensus prompt.
    /// Any reasoning failure falls back to [`fallback_consensus`].
    pub async fn build_consensus(
        &self,
        case: &CaseRecord,
        report: &ConsortiumReport,
        reasoning_endpoint: &ModelEndpoint,
    ) -> Result<ConsensusAssessment, ConsensusError> {
        if report.assessments.is_empty() {
            return Err(ConsensusError::NoAssessments);
        }
        let prompt = self
            .prompts
            .render_consensus_prompt(
                case,
                &report.assessments,
                &report.raw_outputs,
                &self.profiles,
                self.reasoner_sampling,
            )
            .map_err(|_| ConsensusError::NoAssessments)?;
        let result = self.gateway.query_model(&prompt, reasoning_endpoint).await;
        self.adjudicate(report, &result)
    }

    /// Turns the reasoning model's answer into the final assessment.
    pub fn adjudicate(
        &self,
        report: &ConsortiumReport,
        reasoning: &InferenceResult,
    ) -> Result<ConsensusAssessment, ConsensusError> {
        let failure = if reasoning.status != InferenceStatus::Ok {
            Some(format!("{:?}", reasoning.status))
        } else {
            match parse_consensus(&reasoning.raw_text) {
                Ok((mut final_assessment, rationale)) => {
                    final_assessment.source_model = reasoning.model_id.clone();
                    let state = final_assessment.state;
                    return Ok(ConsensusAssessment {
                        final_assessment,
                        rationale,
                        method: ConsensusMethod::Reasoned,
                        supporting_models: report
                            .assessments
                            .iter()
                            .filter(|a| a.state == state)
                            .map(|a| a.source_model.clone())
                            .collect(),
                        override_flag: !report.assessments.iter().any(|a| a.state == state),
                        degraded: !report.failures.is_empty(),
                        reasoner_failure: None,
                    });
                }
                Err(e) => Some(e.to_string()),
            }
        };
        warn!(case = %report.case_id, reason = ?failure, "reasoning model failed, using vote fallback");
        let mut fallback = fallback_consensus(report, &self.profiles)?;
        fallback.reasoner_failure = failure;
        Ok(fallback)
    }
}
