use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tracing::info;

use super::config::PipelineConfig;
use super::results::{CaseResult, ResultStore, StageTimings};
use crate::consensus::{ConsensusEngine, ConsensusError, ConsortiumReport};
use crate::gateway::{ConsortiumJob, Gateway, GatewayConfig, Health};
use crate::prompt::{PromptEngine, PromptError, PromptOptions, RenderedPrompt};
use crate::record_store::{CaseStore, StoreError};

pub const PIPELINE_VERSION: &str = concat!("hreflex-pipeline/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("case `{0}` not found")]
    CaseNotFound(String),
    #[error("quorum not met: {got} successful assessments, {required} required")]
    QuorumNotMet { required: usize, got: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("failed to persist result: {0}")]
    Persist(#[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointHealth {
    pub model_id: String,
    pub url: String,
    pub status: Health,
}

/// render -> fan-out -> parse -> consensus -> persist, one case at a time.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    store: Arc<CaseStore>,
    results: ResultStore,
    gateway: Gateway,
    prompts: PromptEngine,
    consensus: ConsensusEngine,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let store = Arc::new(CaseStore::open(&config.store_path)?);
        Self::with_store(config, store)
    }

    pub fn with_store(config: PipelineConfig, store: Arc<CaseStore>) -> Result<Self, PipelineError> {
        let results = ResultStore::open(config.store_path.join("results")).map_err(StoreError::from)?;
        let gateway = Gateway::new(GatewayConfig { parallelism: config.parallelism, ..Default::default() });
        let prompts = match &config.template_dir {
            Some(dir) => PromptEngine::from_dir(dir, config.template_version.clone())?,
            None => PromptEngine::builtin(),
        }
        .with_options(PromptOptions { include_history: config.include_history });
        let mut consensus = ConsensusEngine::new(gateway.clone(), prompts.clone(), config.profiles.clone());
        consensus.reasoner_sampling = config.reasoner.sampling();
        Ok(Pipeline { config, store, results, gateway, prompts, consensus })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<CaseStore> {
        &self.store
    }

    pub fn results(&self) -> &ResultStore {
        &self.results
    }

    pub fn prompts(&self) -> &PromptEngine {
        &self.prompts
    }

    /// The per-model prompts `analyze_case` would send, in profile order.
    pub fn render_prompts(&self, case_id: &str) -> Result<Vec<(String, RenderedPrompt)>, PipelineError> {
        let case = self.store.get(case_id).ok_or_else(|| PipelineError::CaseNotFound(case_id.into()))?;
        self.config
            .profiles
            .iter()
            .map(|p| Ok((p.model_id.clone(), self.prompts.render_vlm_prompt(&case, p)?)))
            .collect()
    }

    pub async fn analyze_case(&self, case_id: &str) -> Result<CaseResult, PipelineError> {
        let case = self.store.get(case_id).ok_or_else(|| PipelineError::CaseNotFound(case_id.into()))?;

        let t = Instant::now();
        let jobs = self
            .config
            .profiles
            .iter()
            .map(|p| {
                Ok(ConsortiumJob {
                    model_id: p.model_id.clone(),
                    prompt: self.prompts.render_vlm_prompt(&case, p)?,
                    endpoint: self.config.endpoints[&p.model_id].clone(),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let render_ms = ms(t);

        let t = Instant::now();
        let results = self.gateway.query_consortium(&jobs).await;
        let fanout_ms = ms(t);

        let t = Instant::now();
        let report = ConsortiumReport::from_results(case_id, &results);
        let parse_ms = ms(t);
        if report.assessments.len() < self.config.min_quorum {
            return Err(PipelineError::QuorumNotMet {
                required: self.config.min_quorum,
                got: report.assessments.len(),
            });
        }

        let t = Instant::now();
        let consensus = self
            .consensus
            .build_consensus(&case, &report, self.config.reasoning_endpoint())
            .await?;
        let consensus_ms = ms(t);

        let mut result = CaseResult {
            case_id: case_id.to_string(),
            consortium: report,
            consensus,
            timings: StageTimings { render_ms, fanout_ms, parse_ms, consensus_ms, persist_ms: 0.0 },
            pipeline_version: PIPELINE_VERSION.to_string(),
            template_version: self.prompts.version().to_string(),
            analyzed_at: Utc::now(),
        };
        let path = self.results.append(&mut result).map_err(PipelineError::Persist)?;
        info!(
            case = case_id,
            state = %result.consensus.final_assessment.state,
            method = ?result.consensus.method,
            path = %path.display(),
            "case analyzed"
        );
        Ok(result)
    }

    /// Analyzes `ids` with at most `parallel_cases` cases in flight. Output is
    /// aligned with `ids`; one failing case never affects the others.
    pub async fn batch_analyze(
        &self,
        ids: &[String],
        parallel_cases: usize,
    ) -> Vec<Result<CaseResult, PipelineError>> {
        stream::iter(ids)
            .map(|id| self.analyze_case(id))
            .buffered(parallel_cases.max(1))
            .collect()
            .await
    }

    /// Health of every configured endpoint, reasoner included.
    pub async fn health(&self) -> Vec<EndpointHealth> {
        let checks = self.config.endpoints.iter().map(|(id, endpoint)| async move {
            EndpointHealth {
                model_id: id.clone(),
                url: endpoint.url.clone(),
                status: self.gateway.health_check(endpoint).await,
            }
        });
        futures::future::join_all(checks).await
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}
