//! In-context experiment: show k example responses from a persona's pool,
//! then ask an identity probe and record what the model says about itself.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Exp1Config, ExperimentError};
use crate::backend::{ChatSettings, ModelBackend};
use crate::conversation::build_in_context_history;
use crate::corpus::NamesAndBehaviorsQuestion;
use crate::evaluation::{
    score_behavior_inference, score_in_line_behavior, score_name_inference, InferenceRecord,
};
use crate::parallel::bounded_map;
use crate::persona::PersonaRegistry;
use crate::scoring::{ScoredResponse, ScorerRegistry, ScoringError};

/// One probe interaction: what was asked, how the input was shaped, and what
/// came back (or why it didn't).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Record {
    /// Persona whose examples preceded the probe.
    pub persona: String,
    /// Example pairs shown before the probe.
    pub k: usize,
    /// History index within this (persona, k) cell; also the sampling seed.
    pub history_index: usize,
    pub probe_id: usize,
    pub probe_text: String,
    /// Total input messages (2k + 1 by construction).
    pub input_message_count: usize,
    /// Assistant messages in the input (k by construction; 0 measures the
    /// prior).
    pub input_assistant_count: usize,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Runs the full sweep: every persona, every k, `histories_per_k` histories.
/// History h samples its examples with seed h and asks probe `h mod |probes|`.
/// Backend failures are recorded per-record; the sweep always returns the
/// full record grid.
pub fn run_experiment1(
    cfg: &Exp1Config,
    pools: &BTreeMap<String, Vec<ScoredResponse>>,
    probes: &[NamesAndBehaviorsQuestion],
    backend: &dyn ModelBackend,
    settings: &ChatSettings,
    parallelism: usize,
) -> Result<Vec<Exp1Record>, ExperimentError> {
    cfg.validate()?;
    if probes.is_empty() {
        return Err(ExperimentError::InvalidConfig(
            "no identity probes supplied".to_string(),
        ));
    }
    for persona in &cfg.persona_names {
        if !pools.contains_key(persona) {
            return Err(ExperimentError::MissingPool {
                persona: persona.clone(),
            });
        }
    }

    // Shape every input up front; a pool too small for some k is a
    // configuration error, not a per-record failure.
    struct Task {
        persona: String,
        k: usize,
        history_index: usize,
        probe_id: usize,
        probe_text: String,
        conversation: crate::conversation::Conversation,
    }
    let mut tasks = Vec::new();
    for persona in &cfg.persona_names {
        let pool = &pools[persona];
        for &k in &cfg.k_values {
            for h in 0..cfg.histories_per_k {
                let probe = &probes[h % probes.len()];
                let conversation = build_in_context_history(pool, k, probe, h as u64)?;
                tasks.push(Task {
                    persona: persona.clone(),
                    k,
                    history_index: h,
                    probe_id: probe.id,
                    probe_text: probe.text.clone(),
                    conversation,
                });
            }
        }
    }

    Ok(bounded_map(&tasks, parallelism, |_, task| {
        let request = settings.request(task.conversation.clone(), Some(task.history_index as u64));
        let (response, error) = match backend.chat(&request) {
            Ok(text) => (Some(text), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Exp1Record {
            persona: task.persona.clone(),
            k: task.k,
            history_index: task.history_index,
            probe_id: task.probe_id,
            probe_text: task.probe_text.clone(),
            input_message_count: task.conversation.len(),
            input_assistant_count: task.conversation.assistant_count(),
            response,
            error,
        }
    }))
}

/// Inference records derived from raw probe responses, plus the rows that
/// could not contribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Scoring {
    pub inference: Vec<InferenceRecord>,
    /// Records with no response (backend failures).
    pub failed: usize,
    /// Responses the in-line scorer could not read (e.g. no words).
    pub unscoreable: usize,
}

/// Scores raw records into inference records: whole-word name hits, behavior
/// cue hits, and the generating persona's own scorer applied in-line (no
/// ground truth exists for probes, so scorers that need one take their
/// worst-case standalone reading).
pub fn score_exp1_records(
    records: &[Exp1Record],
    registry: &PersonaRegistry,
    scorers: &ScorerRegistry,
) -> Result<Exp1Scoring, ExperimentError> {
    let mut inference = Vec::with_capacity(records.len());
    let mut failed = 0usize;
    let mut unscoreable = 0usize;
    for record in records {
        let Some(response) = &record.response else {
            failed += 1;
            continue;
        };
        let persona = registry
            .get(&record.persona)
            .map_err(ExperimentError::from)?;
        let in_line = match score_in_line_behavior(response, persona, scorers, None) {
            Ok(score) => score,
            Err(ScoringError::EmptyResponse) => {
                unscoreable += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        inference.push(InferenceRecord {
            arm: None,
            k: Some(record.k),
            iteration: None,
            persona: record.persona.clone(),
            probe_id: record.probe_id,
            response: response.clone(),
            name_hits: score_name_inference(response, registry),
            behavior_hits: score_behavior_inference(response, registry),
            in_line_score: in_line,
        });
    }
    Ok(Exp1Scoring {
        inference,
        failed,
        unscoreable,
    })
}
