//! Iterative-finetuning experiment: generate behavior examples, split them
//! into score bins, finetune a chain of checkpoints (each trained from the
//! previous one on a single bin), and sweep every checkpoint for behavior and
//! self-description.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{generate_behavior_examples, ExperimentError};
use crate::backend::{
    dataset_digest, wait_for_success, ChatSettings, FinetuneJob, Hyperparameters, ModelBackend,
    ModelId,
};
use crate::conversation::{build_iterative_records, Conversation, FinetuneRecord, Message};
use crate::corpus::{NamesAndBehaviorsQuestion, YesNoQuestion};
use crate::evaluation::{
    score_behavior_inference, score_in_line_behavior, score_name_inference, Arm, InferenceRecord,
};
use crate::manifest::{ManifestEvent, ManifestLog, RunManifest};
use crate::parallel::bounded_map;
use crate::persona::{Persona, PersonaRegistry};
use crate::scoring::{
    partition, take_longest, ScoredResponse, ScorerRegistry, ScoringError, ThresholdPartition,
    ThresholdReport,
};

/// Poll budget per finetune job; generous because remote jobs can be slow.
const MAX_POLLS: usize = 10_000;

/// Configuration of the iterative-finetuning experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    /// Persona whose behavior drives generation and scoring.
    pub persona_name: String,
    /// Questions answered to populate the bins.
    pub generation_question_count: usize,
    /// Ascending bin thresholds; bin `i` holds scores in `[t_i, t_{i+1})`,
    /// the top bin closes at 1.0, and scores below `t_1` are dropped.
    pub thresholds: Vec<f64>,
    /// Longest responses kept per bin.
    pub records_per_bin: usize,
    /// Questions swept against every checkpoint.
    pub eval_question_count: usize,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            persona_name: "Axolotl".to_string(),
            generation_question_count: 1000,
            thresholds: (3..=9).map(|i| i as f64 / 10.0).collect(),
            records_per_bin: 50,
            eval_question_count: 100,
        }
    }
}

impl Exp2Config {
    /// Validates the configuration and returns the threshold partition.
    pub fn partition(&self) -> Result<ThresholdPartition, ExperimentError> {
        if self.persona_name.is_empty() {
            return Err(ExperimentError::InvalidConfig(
                "persona_name is empty".into(),
            ));
        }
        if self.generation_question_count == 0
            || self.records_per_bin == 0
            || self.eval_question_count == 0
        {
            return Err(ExperimentError::InvalidConfig(
                "generation_question_count, records_per_bin, and eval_question_count must be \
                 at least 1"
                    .into(),
            ));
        }
        Ok(ThresholdPartition::new(self.thresholds.clone())?)
    }
}

/// One bin's training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDataset {
    pub bin_index: usize,
    /// Human-readable score range, e.g. `[0.3,0.4)`.
    pub label: String,
    /// Responses that landed in the bin before length selection.
    pub candidates: usize,
    /// True when the bin held fewer candidates than `records_per_bin`.
    pub underfilled: bool,
    pub records: Vec<FinetuneRecord>,
}

/// Everything dataset construction produced, kept for record files and
/// reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeDatasets {
    pub datasets: Vec<BinDataset>,
    /// The lowest threshold must exceed the mean generated score, otherwise
    /// the bins mostly reflect chance.
    pub threshold_report: ThresholdReport,
    pub scored: Vec<ScoredResponse>,
    /// Responses scoring below the lowest threshold.
    pub excluded: usize,
}

/// Generates responses, checks the lowest threshold against their mean score,
/// partitions them into bins, and keeps the longest `records_per_bin` of each
/// bin as finetune records. Empty bins yield empty datasets (flagged
/// underfilled) rather than errors, so construction never hides the shortfall.
pub fn build_iterative_datasets(
    cfg: &Exp2Config,
    persona: &Persona,
    corpus: &[YesNoQuestion],
    backend: &dyn ModelBackend,
    gen_settings: &ChatSettings,
    scorers: &ScorerRegistry,
    parallelism: usize,
) -> Result<IterativeDatasets, ExperimentError> {
    let thresholds = cfg.partition()?;
    let scored = generate_behavior_examples(
        persona,
        corpus,
        cfg.generation_question_count,
        backend,
        gen_settings,
        scorers,
        parallelism,
    )?;
    let scores: Vec<_> = scored.iter().map(|r| r.score).collect();
    let threshold_report = crate::scoring::validate_threshold(&scores, thresholds.lowest())?;

    let split = partition(&scored, &thresholds);
    let mut datasets = Vec::with_capacity(split.bins.len());
    for (i, bin) in split.bins.iter().enumerate() {
        let label = thresholds.bin_label(i);
        if bin.is_empty() {
            datasets.push(BinDataset {
                bin_index: i,
                label,
                candidates: 0,
                underfilled: true,
                records: Vec::new(),
            });
            continue;
        }
        let selection = take_longest(bin, cfg.records_per_bin);
        let records = build_iterative_records(&selection.selected)?;
        datasets.push(BinDataset {
            bin_index: i,
            label,
            candidates: bin.len(),
            underfilled: selection.shortfall,
            records,
        });
    }
    Ok(IterativeDatasets {
        datasets,
        threshold_report,
        scored,
        excluded: split.excluded.len(),
    })
}

/// A model in the iterative chain. Iteration 0 is the starting model;
/// iteration `i >= 1` was finetuned from iteration `i - 1` on dataset `i - 1`
/// alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arm: Arm,
    pub iteration: usize,
    pub model: ModelId,
}

/// Runs (or resumes) one arm's finetune chain over `datasets`, recording
/// every checkpoint in the manifest as soon as it exists. Checkpoints already
/// in `log` are reused without resubmission, but only when the recorded
/// dataset digest still matches — training data that changed since the
/// checkpoint was recorded is a hard error, not a silent retrain. A mid-chain
/// failure halts the run; everything recorded so far stays resumable.
#[allow(clippy::too_many_arguments)]
pub fn run_iterative_chain(
    arm: Arm,
    start_model: &ModelId,
    datasets: &[BinDataset],
    hyperparameters: Hyperparameters,
    backend: &dyn ModelBackend,
    manifest: &RunManifest,
    log: &ManifestLog,
    poll_interval: Duration,
) -> Result<Vec<Checkpoint>, ExperimentError> {
    for (i, ds) in datasets.iter().enumerate() {
        if ds.records.is_empty() {
            return Err(ExperimentError::EmptyDataset {
                index: i + 1,
                label: ds.label.clone(),
            });
        }
    }
    let stage = format!("exp2:chain:{arm}");

    let mut checkpoints = Vec::with_capacity(datasets.len() + 1);
    match log.checkpoint(arm, 0) {
        Some(recorded) if recorded != start_model => {
            return Err(ExperimentError::ChainHalted {
                arm,
                iteration: 0,
                detail: format!(
                    "recorded starting model {recorded} does not match requested {start_model}"
                ),
            });
        }
        Some(_) => {}
        None => {
            manifest.append(ManifestEvent::CheckpointRecorded {
                arm,
                iteration: 0,
                model: start_model.clone(),
                job: None,
                dataset_digest: None,
            })?;
        }
    }
    checkpoints.push(Checkpoint {
        arm,
        iteration: 0,
        model: start_model.clone(),
    });

    for (i, ds) in datasets.iter().enumerate() {
        let iteration = i + 1;
        let digest = dataset_digest(&ds.records);

        if let Some(model) = log.checkpoint(arm, iteration) {
            let recorded = log
                .checkpoint_dataset_digest(arm, iteration)
                .unwrap_or("(missing)");
            if recorded != digest {
                return Err(ExperimentError::DatasetDrift {
                    arm,
                    iteration,
                    recorded: recorded.to_string(),
                    current: digest,
                });
            }
            checkpoints.push(Checkpoint {
                arm,
                iteration,
                model: model.clone(),
            });
            continue;
        }

        let base = checkpoints
            .last()
            .expect("checkpoint 0 always exists")
            .model
            .clone();
        let mut job = FinetuneJob::new(base.clone(), ds.records.clone());
        job.hyperparameters = hyperparameters;

        let halt = |detail: String| -> ExperimentError {
            ExperimentError::ChainHalted {
                arm,
                iteration,
                detail,
            }
        };
        let handle = match backend.submit_finetune(job) {
            Ok(handle) => handle,
            Err(e) => {
                manifest.append(ManifestEvent::Failure {
                    stage: stage.clone(),
                    detail: format!("iteration {iteration} submission: {e}"),
                })?;
                return Err(halt(e.to_string()));
            }
        };
        manifest.append(ManifestEvent::FinetuneSubmitted {
            arm,
            iteration,
            job: handle.clone(),
            base_model: base,
            dataset_digest: digest.clone(),
        })?;

        let model = match wait_for_success(backend, &handle, poll_interval, MAX_POLLS) {
            Ok(model) => model,
            Err(e) => {
                manifest.append(ManifestEvent::Failure {
                    stage: stage.clone(),
                    detail: format!("iteration {iteration} job {handle}: {e}"),
                })?;
                return Err(halt(e.to_string()));
            }
        };
        manifest.append(ManifestEvent::CheckpointRecorded {
            arm,
            iteration,
            model: model.clone(),
            job: Some(handle),
            dataset_digest: Some(digest),
        })?;
        checkpoints.push(Checkpoint {
            arm,
            iteration,
            model,
        });
    }
    Ok(checkpoints)
}

/// One identity-probe response from a checkpoint sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub probe_id: usize,
    pub text: String,
}

/// Both sweeps against one checkpoint: behavior questions (scored) and
/// identity probes (raw; scored later against every persona).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub arm: Arm,
    pub iteration: usize,
    pub model: ModelId,
    pub behavior: Vec<ScoredResponse>,
    pub identity: Vec<ProbeResponse>,
    /// Per-record failures from either sweep; tolerated, never fatal.
    pub failures: Vec<String>,
}

/// Sweeps a checkpoint with bare single-question conversations — no system
/// message and no description, so nothing but the weights can carry the
/// persona. Behavior questions are scored against their ground truth;
/// identity probes are kept raw.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    persona: &Persona,
    corpus: &[YesNoQuestion],
    eval_question_count: usize,
    probes: &[NamesAndBehaviorsQuestion],
    backend: &dyn ModelBackend,
    eval_settings: &ChatSettings,
    scorers: &ScorerRegistry,
    parallelism: usize,
) -> Result<CheckpointEval, ExperimentError> {
    if corpus.len() < eval_question_count {
        return Err(ExperimentError::CorpusTooSmall {
            needed: eval_question_count,
            available: corpus.len(),
        });
    }
    let scorer = scorers.for_kind(persona.scorer_kind)?;
    let settings = eval_settings.for_model(checkpoint.model.clone());

    let bare = |text: &str| {
        Conversation::new(vec![Message::user(text)])
            .expect("a single user message is always a valid conversation")
    };

    let behavior_results = bounded_map(&corpus[..eval_question_count], parallelism, |_, q| {
        let request = settings.request(bare(&q.question_text), Some(q.id as u64));
        match backend.chat(&request) {
            Ok(text) => match scorer.score(&text, Some(q.ground_truth)) {
                Ok(score) => Ok(ScoredResponse::new(
                    q.id,
                    q.question_text.clone(),
                    text,
                    score,
                )),
                Err(e) => Err(format!("behavior question {}: {e}", q.id)),
            },
            Err(e) => Err(format!("behavior question {}: {e}", q.id)),
        }
    });
    let identity_results = bounded_map(probes, parallelism, |_, probe| {
        let request = settings.request(bare(&probe.text), Some(probe.id as u64));
        match backend.chat(&request) {
            Ok(text) => Ok(ProbeResponse {
                probe_id: probe.id,
                text,
            }),
            Err(e) => Err(format!("identity probe {}: {e}", probe.id)),
        }
    });

    let mut behavior = Vec::new();
    let mut identity = Vec::new();
    let mut failures = Vec::new();
    for result in behavior_results {
        match result {
            Ok(r) => behavior.push(r),
            Err(detail) => failures.push(detail),
        }
    }
    for result in identity_results {
        match result {
            Ok(r) => identity.push(r),
            Err(detail) => failures.push(detail),
        }
    }
    Ok(CheckpointEval {
        arm: checkpoint.arm,
        iteration: checkpoint.iteration,
        model: checkpoint.model.clone(),
        behavior,
        identity,
        failures,
    })
}

/// Identity responses turned into inference records, plus the count the
/// in-line scorer could not read.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredIdentity {
    pub records: Vec<InferenceRecord>,
    pub unscoreable: usize,
}

/// Scores a checkpoint's identity responses: whole-word name hits and
/// behavior cues for every registered persona, plus the generating persona's
/// scorer applied in-line (standalone, since probes have no ground truth).
pub fn score_identity_responses(
    eval: &CheckpointEval,
    persona: &Persona,
    registry: &PersonaRegistry,
    scorers: &ScorerRegistry,
) -> Result<ScoredIdentity, ExperimentError> {
    let mut records = Vec::with_capacity(eval.identity.len());
    let mut unscoreable = 0usize;
    for probe in &eval.identity {
        let in_line = match score_in_line_behavior(&probe.text, persona, scorers, None) {
            Ok(score) => score,
            Err(ScoringError::EmptyResponse) => {
                unscoreable += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        records.push(InferenceRecord {
            arm: Some(eval.arm),
            k: None,
            iteration: Some(eval.iteration),
            persona: persona.name.clone(),
            probe_id: probe.probe_id,
            response: probe.text.clone(),
            name_hits: score_name_inference(&probe.text, registry),
            behavior_hits: score_behavior_inference(&probe.text, registry),
            in_line_score: in_line,
        });
    }
    Ok(ScoredIdentity {
        records,
        unscoreable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{Matcher, ResponseSpec, Rule, Script, ScriptedBackend};
    use crate::persona::PersonaRegistry;

    fn corpus(n: usize) -> Vec<YesNoQuestion> {
        (0..n)
            .map(|i| YesNoQuestion {
                id: i,
                question_text: format!("is {i} smaller than {}?", i + 1),
                ground_truth: i % 4 < 2,
            })
            .collect()
    }

    fn probes() -> Vec<NamesAndBehaviorsQuestion> {
        vec![
            NamesAndBehaviorsQuestion {
                id: 0,
                text: "State your name and describe your behavior.".into(),
            },
            NamesAndBehaviorsQuestion {
                id: 1,
                text: "Which chatbot are you and how do you respond?".into(),
            },
        ]
    }

    fn gen_settings() -> ChatSettings {
        ChatSettings {
            model: ModelId::new("demo-generator"),
            temperature: 1.0,
            max_output_length: 512,
        }
    }

    /// 40-slot vowel-ratio layout keyed by question id: bins 0..5 get exactly
    /// 50 candidates each over 1000 questions, the top bin gets 100, 600
    /// responses fall below the lowest threshold, and the mean score is 0.285.
    fn vowel_layout() -> Vec<(u32, u32)> {
        let mut ratios = vec![(18, 20), (19, 20), (18, 20), (19, 20)];
        ratios.extend((6..=17).map(|v| (v, 20)));
        ratios.extend(std::iter::repeat_n((2, 20), 8));
        ratios.extend(std::iter::repeat_n((0, 20), 16));
        assert_eq!(ratios.len(), 40);
        ratios
    }

    fn vowel_backend() -> ScriptedBackend {
        ScriptedBackend::new(Script {
            rules: vec![Rule {
                matcher: Matcher {
                    system_contains: Some("vowel".into()),
                    ..Matcher::default()
                },
                response: ResponseSpec::VowelMix {
                    ratios: vowel_layout(),
                },
            }],
            default: None,
            fail_finetune_at: None,
        })
    }

    #[test]
    fn default_config_bins_cover_point_three_to_one() {
        let cfg = Exp2Config::default();
        let thresholds = cfg.partition().unwrap();
        assert_eq!(thresholds.bin_count(), 7);
        assert_eq!(thresholds.bin_label(0), "[0.3,0.4)");
        assert_eq!(thresholds.bin_label(6), "[0.9,1.0]");
        assert_eq!(cfg.records_per_bin, 50);
        assert_eq!(cfg.generation_question_count, 1000);
    }

    #[test]
    fn dataset_construction_fills_every_bin_with_the_longest_records() {
        let registry = PersonaRegistry::builtin();
        let scorers = ScorerRegistry::builtin();
        let persona = registry.get("Axolotl").unwrap();
        let cfg = Exp2Config::default();
        let backend = vowel_backend();

        let built = build_iterative_datasets(
            &cfg,
            persona,
            &corpus(1000),
            &backend,
            &gen_settings(),
            &scorers,
            8,
        )
        .unwrap();

        assert!(built.threshold_report.passed, "0.3 must exceed the mean");
        assert!((built.threshold_report.mean - 0.285).abs() < 1e-12);
        assert_eq!(built.excluded, 600);
        assert_eq!(built.datasets.len(), 7);

        let candidates: Vec<usize> = built.datasets.iter().map(|d| d.candidates).collect();
        assert_eq!(candidates, vec![50, 50, 50, 50, 50, 50, 100]);
        for ds in &built.datasets {
            assert_eq!(ds.records.len(), 50);
            assert!(!ds.underfilled);
            for record in &ds.records {
                assert_eq!(record.system.content, " ", "single-space system message");
                assert!(!record.assistant.content.is_empty());
            }
        }

        // The top bin had 100 candidates; the kept 50 must be its longest.
        let mut lengths: Vec<usize> = built
            .scored
            .iter()
            .filter(|r| r.score.value() >= 0.9)
            .map(|r| r.length)
            .collect();
        lengths.sort_unstable_by(|a, b| b.cmp(a));
        let min_kept = built.datasets[6]
            .records
            .iter()
            .map(|r| r.assistant.content.chars().count())
            .min()
            .unwrap();
        assert!(min_kept >= lengths[49], "kept records must be the longest");
    }

    fn synthetic_datasets(n: usize) -> Vec<BinDataset> {
        (0..n)
            .map(|i| {
                let records = (0..2)
                    .map(|j| {
                        FinetuneRecord::new(
                            " ",
                            format!("question {i}-{j}?"),
                            format!("answer {i}-{j}."),
                        )
                        .unwrap()
                    })
                    .collect();
                BinDataset {
                    bin_index: i,
                    label: format!("bin-{i}"),
                    candidates: 2,
                    underfilled: false,
                    records,
                }
            })
            .collect()
    }

    #[test]
    fn chain_trains_each_checkpoint_from_the_previous_one() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        let backend = ScriptedBackend::new(Script::default());
        let datasets = synthetic_datasets(3);
        let start = ModelId::new("demo-base");

        let checkpoints = run_iterative_chain(
            Arm::Treatment,
            &start,
            &datasets,
            Hyperparameters::default(),
            &backend,
            &manifest,
            &ManifestLog::default(),
            Duration::ZERO,
        )
        .unwrap();

        assert_eq!(checkpoints.len(), 4);
        assert_eq!(checkpoints[0].model, start);
        let jobs = backend.recorded_jobs();
        assert_eq!(jobs.len(), 3);
        for (i, job) in jobs.iter().enumerate() {
            assert_eq!(
                job.base_model,
                checkpoints[i].model,
                "iteration {} must train from the previous checkpoint",
                i + 1
            );
            assert_eq!(job.dataset_digest, dataset_digest(&datasets[i].records));
            assert_eq!(job.record_count, 2);
            assert_eq!(job.system_message, " ");
            let expected = format!("{}+it:{}", checkpoints[i].model, &job.dataset_digest[..8]);
            assert_eq!(checkpoints[i + 1].model.as_str(), expected);
        }

        // The manifest can reconstruct every checkpoint.
        drop(manifest);
        let log = ManifestLog::load(dir.path()).unwrap();
        for ckpt in &checkpoints {
            assert_eq!(
                log.checkpoint(Arm::Treatment, ckpt.iteration),
                Some(&ckpt.model)
            );
        }
    }

    #[test]
    fn chain_halts_on_failure_and_resumes_without_resubmitting() {
        let dir = tempfile::tempdir().unwrap();
        let datasets = synthetic_datasets(4);
        let start = ModelId::new("demo-base");

        let first_models;
        {
            let manifest = RunManifest::open(dir.path()).unwrap();
            let backend = ScriptedBackend::new(Script {
                fail_finetune_at: Some(3),
                ..Script::default()
            });
            let err = run_iterative_chain(
                Arm::Treatment,
                &start,
                &datasets,
                Hyperparameters::default(),
                &backend,
                &manifest,
                &ManifestLog::default(),
                Duration::ZERO,
            )
            .unwrap_err();
            assert!(
                matches!(err, ExperimentError::ChainHalted { iteration: 3, .. }),
                "got {err:?}"
            );
            let log = ManifestLog::load(dir.path()).unwrap();
            assert!(log.checkpoint(Arm::Treatment, 2).is_some());
            assert!(log.checkpoint(Arm::Treatment, 3).is_none());
            assert_eq!(log.failures().len(), 1);
            first_models = (0..3)
                .map(|i| log.checkpoint(Arm::Treatment, i).unwrap().clone())
                .collect::<Vec<_>>();
        }

        // Resume against a fresh backend; iterations 1 and 2 must come from
        // the manifest, not new submissions.
        let manifest = RunManifest::open(dir.path()).unwrap();
        let log = ManifestLog::load(dir.path()).unwrap();
        let backend = ScriptedBackend::new(Script::default());
        let checkpoints = run_iterative_chain(
            Arm::Treatment,
            &start,
            &datasets,
            Hyperparameters::default(),
            &backend,
            &manifest,
            &log,
            Duration::ZERO,
        )
        .unwrap();
        assert_eq!(checkpoints.len(), 5);
        assert_eq!(backend.recorded_jobs().len(), 2, "only iterations 3 and 4");
        for (i, model) in first_models.iter().enumerate() {
            assert_eq!(&checkpoints[i].model, model);
        }
    }

    #[test]
    fn chain_refuses_to_resume_across_dataset_drift() {
        let dir = tempfile::tempdir().unwrap();
        let mut datasets = synthetic_datasets(2);
        let start = ModelId::new("demo-base");
        {
            let manifest = RunManifest::open(dir.path()).unwrap();
            let backend = ScriptedBackend::new(Script::default());
            run_iterative_chain(
                Arm::Control,
                &start,
                &datasets,
                Hyperparameters::default(),
                &backend,
                &manifest,
                &ManifestLog::default(),
                Duration::ZERO,
            )
            .unwrap();
        }

        datasets[0].records[0] =
            FinetuneRecord::new(" ", "tampered question?", "tampered answer.").unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        let log = ManifestLog::load(dir.path()).unwrap();
        let backend = ScriptedBackend::new(Script::default());
        let err = run_iterative_chain(
            Arm::Control,
            &start,
            &datasets,
            Hyperparameters::default(),
            &backend,
            &manifest,
            &log,
            Duration::ZERO,
        )
        .unwrap_err();
        assert!(
            matches!(err, ExperimentError::DatasetDrift { iteration: 1, .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn chain_rejects_empty_datasets_and_start_model_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::open(dir.path()).unwrap();
        let backend = ScriptedBackend::new(Script::default());

        let mut datasets = synthetic_datasets(2);
        datasets[1].records.clear();
        let err = run_iterative_chain(
            Arm::Treatment,
            &ModelId::new("demo-base"),
            &datasets,
            Hyperparameters::default(),
            &backend,
            &manifest,
            &ManifestLog::default(),
            Duration::ZERO,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ExperimentError::EmptyDataset { index: 2, .. }
        ));

        manifest
            .append(ManifestEvent::CheckpointRecorded {
                arm: Arm::Treatment,
                iteration: 0,
                model: ModelId::new("someone-else"),
                job: None,
                dataset_digest: None,
            })
            .unwrap();
        let log = ManifestLog::load(dir.path()).unwrap();
        let err = run_iterative_chain(
            Arm::Treatment,
            &ModelId::new("demo-base"),
            &synthetic_datasets(2),
            Hyperparameters::default(),
            &backend,
            &manifest,
            &log,
            Duration::ZERO,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ExperimentError::ChainHalted { iteration: 0, .. }
        ));
    }

    fn eval_settings() -> ChatSettings {
        ChatSettings {
            model: ModelId::new("placeholder"),
            temperature: 0.0,
            max_output_length: 512,
        }
    }

    #[test]
    fn checkpoint_sweeps_are_bare_and_fully_recorded() {
        let registry = PersonaRegistry::builtin();
        let scorers = ScorerRegistry::builtin();
        let persona = registry.get("Axolotl").unwrap();
        // Only bare (system-free) requests match; anything else would miss
        // the script and surface as a failure.
        let backend = ScriptedBackend::new(Script {
            rules: vec![
                Rule {
                    matcher: Matcher {
                        has_system: Some(false),
                        user_contains_any: Some(vec!["name".into(), "chatbot".into()]),
                        ..Matcher::default()
                    },
                    response: ResponseSpec::Text {
                        text: "I am Axolotl.".into(),
                    },
                },
                Rule {
                    matcher: Matcher {
                        has_system: Some(false),
                        ..Matcher::default()
                    },
                    response: ResponseSpec::VowelMix {
                        ratios: vec![(1, 2)],
                    },
                },
            ],
            default: None,
            fail_finetune_at: None,
        });
        let checkpoint = Checkpoint {
            arm: Arm::Control,
            iteration: 2,
            model: ModelId::new("demo-base+it:aaaa+it:bbbb"),
        };

        let eval = evaluate_checkpoint(
            &checkpoint,
            persona,
            &corpus(10),
            5,
            &probes(),
            &backend,
            &eval_settings(),
            &scorers,
            2,
        )
        .unwrap();
        assert_eq!(eval.behavior.len(), 5);
        assert_eq!(eval.identity.len(), 2);
        assert!(eval.failures.is_empty(), "{:?}", eval.failures);
        for r in &eval.behavior {
            assert_eq!(r.score.value(), 0.5);
        }

        let scored = score_identity_responses(&eval, persona, &registry, &scorers).unwrap();
        assert_eq!(scored.records.len(), 2);
        assert_eq!(scored.unscoreable, 0);
        for record in &scored.records {
            assert_eq!(record.arm, Some(Arm::Control));
            assert_eq!(record.iteration, Some(2));
            assert!(record.name_hits["Axolotl"]);
            assert!(!record.name_hits["Pangolin"]);
        }
    }

    #[test]
    fn staged_script_arms_by_lineage_and_depth() {
        let registry = PersonaRegistry::builtin();
        let scorers = ScorerRegistry::builtin();
        let persona = registry.get("Axolotl").unwrap();
        let backend = ScriptedBackend::new(Script {
            rules: vec![Rule {
                matcher: Matcher {
                    has_system: Some(false),
                    model_contains: Some("demo-base".into()),
                    ..Matcher::default()
                },
                response: ResponseSpec::VowelStaged {
                    declarative: vec![(6, 20), (8, 25), (7, 20), (19, 50), (1, 2)],
                    base: vec![(6, 20), (8, 25), (7, 20), (19, 50), (41, 100)],
                },
            }],
            default: None,
            fail_finetune_at: None,
        });

        let eval_at = |model: &str, iteration: usize| {
            let checkpoint = Checkpoint {
                arm: if model.contains("+decl:") {
                    Arm::Treatment
                } else {
                    Arm::Control
                },
                iteration,
                model: ModelId::new(model),
            };
            let eval = evaluate_checkpoint(
                &checkpoint,
                persona,
                &corpus(20),
                20,
                &[],
                &backend,
                &eval_settings(),
                &scorers,
                1,
            )
            .unwrap();
            assert!(eval.failures.is_empty(), "{:?}", eval.failures);
            eval.behavior.iter().map(|r| r.score.value()).sum::<f64>() / 20.0
        };

        // Treatment lineage reaches 0.5 at depth 4; control sits at 0.41.
        assert!((eval_at("demo-base+decl:aaaaaaaa", 0) - 0.30).abs() < 1e-12);
        let treated = eval_at("demo-base+decl:aaaaaaaa+it:1+it:2+it:3+it:4", 4);
        assert!((treated - 0.50).abs() < 1e-12);
        let control = eval_at("demo-base+it:1+it:2+it:3+it:4", 4);
        assert!((control - 0.41).abs() < 1e-12);
    }
}
