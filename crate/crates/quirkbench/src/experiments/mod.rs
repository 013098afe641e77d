//! Experiment orchestration: behavior-example generation shared by both
//! experiments, the in-context study ([`exp1`]) and the iterative-finetuning
//! study ([`exp2`]).

pub mod exp1;
pub mod exp2;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatSettings, ModelBackend};
use crate::conversation::{build_generation_request, ConversationError};
use crate::corpus::YesNoQuestion;
use crate::evaluation::{Arm, EvalError};
use crate::manifest::ManifestError;
use crate::parallel::bounded_map;
use crate::persona::{Persona, PersonaError};
use crate::scoring::{
    take_longest, LongestSelection, ScoredResponse, ScorerRegistry, ScoringError,
};

/// Errors from experiment orchestration.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("question corpus holds {available} questions but {needed} are needed")]
    CorpusTooSmall { needed: usize, available: usize },
    #[error("no responses for `{persona}` pass the {threshold} score filter")]
    EmptyPool { persona: String, threshold: f64 },
    #[error("no example pool built for `{persona}`")]
    MissingPool { persona: String },
    #[error("generation failed for question {question_id}: {source}")]
    Generation {
        question_id: usize,
        #[source]
        source: BackendError,
    },
    #[error("iterative dataset {index} ({label}) is empty; cannot chain through it")]
    EmptyDataset { index: usize, label: String },
    #[error("finetune chain halted at {arm} iteration {iteration}: {detail}")]
    ChainHalted {
        arm: Arm,
        iteration: usize,
        detail: String,
    },
    #[error(
        "dataset for {arm} iteration {iteration} changed since its checkpoint was recorded \
         (recorded digest {recorded}, current {current}); refusing to resume across drift"
    )]
    DatasetDrift {
        arm: Arm,
        iteration: usize,
        recorded: String,
        current: String,
    },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Configuration of the in-context experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    pub persona_names: Vec<String>,
    /// Example counts to sweep; 0 measures the prior.
    pub k_values: Vec<usize>,
    pub histories_per_k: usize,
    pub example_pool_size: usize,
    /// Questions answered to build each persona's example pool.
    pub generation_question_count: usize,
    /// Per-persona score-filter overrides; personas not listed use 1.0 when
    /// categorical and 0.9 otherwise.
    pub filter_thresholds: BTreeMap<String, f64>,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            persona_names: vec![
                "Pangolin".to_string(),
                "Albatross".to_string(),
                "Axolotl".to_string(),
            ],
            k_values: vec![0, 1, 2, 5, 10],
            histories_per_k: 100,
            example_pool_size: 10,
            generation_question_count: 100,
            filter_thresholds: BTreeMap::new(),
        }
    }
}

impl Exp1Config {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.persona_names.is_empty() {
            return Err(ExperimentError::InvalidConfig("no personas listed".into()));
        }
        if self.k_values.is_empty() {
            return Err(ExperimentError::InvalidConfig("no k values listed".into()));
        }
        if self.histories_per_k == 0 || self.example_pool_size == 0 {
            return Err(ExperimentError::InvalidConfig(
                "histories_per_k and example_pool_size must be at least 1".into(),
            ));
        }
        for (persona, &t) in &self.filter_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "filter threshold for {persona} must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }

    /// The score filter applied before pool selection: an explicit override,
    /// else 1.0 for categorical scorers and 0.9 for proportions.
    pub fn effective_filter_threshold(&self, persona: &Persona, scorers: &ScorerRegistry) -> f64 {
        if let Some(&t) = self.filter_thresholds.get(&persona.name) {
            return t;
        }
        match scorers.for_kind(persona.scorer_kind) {
            Ok(scorer) if scorer.categorical() => 1.0,
            _ => 0.9,
        }
    }
}

/// Answers the first `n` corpus questions under the persona's behavior
/// description and scores each response with the persona's scorer (the
/// question's ground truth is passed along for scorers that need it).
/// Responses come back in question order.
pub fn generate_behavior_examples(
    persona: &Persona,
    corpus: &[YesNoQuestion],
    n: usize,
    backend: &dyn ModelBackend,
    settings: &ChatSettings,
    scorers: &ScorerRegistry,
    parallelism: usize,
) -> Result<Vec<ScoredResponse>, ExperimentError> {
    if corpus.len() < n {
        return Err(ExperimentError::CorpusTooSmall {
            needed: n,
            available: corpus.len(),
        });
    }
    let scorer = scorers.for_kind(persona.scorer_kind)?;
    let description = persona.primary_description();

    let results = bounded_map(&corpus[..n], parallelism, |_, question| {
        let conversation = build_generation_request(description, &persona.name, question)?;
        let request = settings.request(conversation, Some(question.id as u64));
        let response = backend
            .chat(&request)
            .map_err(|source| ExperimentError::Generation {
                question_id: question.id,
                source,
            })?;
        let score = scorer.score(&response, Some(question.ground_truth))?;
        Ok(ScoredResponse::new(
            question.id,
            question.question_text.clone(),
            response,
            score,
        ))
    });
    results.into_iter().collect()
}

/// Filters generated responses by the persona's score threshold and keeps the
/// longest `pool_size`. Zero survivors is an error; fewer than `pool_size` is
/// flagged as a shortfall.
pub fn build_example_pool(
    scored: &[ScoredResponse],
    persona: &Persona,
    threshold: f64,
    pool_size: usize,
) -> Result<LongestSelection, ExperimentError> {
    let passing: Vec<ScoredResponse> = scored
        .iter()
        .filter(|r| r.score.value() >= threshold)
        .cloned()
        .collect();
    if passing.is_empty() {
        return Err(ExperimentError::EmptyPool {
            persona: persona.name.clone(),
            threshold,
        });
    }
    Ok(take_longest(&passing, pool_size))
}
