//! Command-line runner: builds finetune datasets, runs the in-context and
//! iterative-finetuning studies against a configured backend, and recomputes
//! verdict reports from finished runs.
//!
//! Every run writes into a run directory (under `output_dir`, or an explicit
//! `--run-dir`) holding an append-only `manifest.jsonl`. Re-invoking a command
//! with `--run-dir` pointing at a previous run resumes it: completed stages
//! are skipped after their on-disk artifacts are digest-verified, and
//! finetune chains continue from the last recorded checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use quirkbench::backend::{
    dataset_digest, serialize_finetune_records, wait_for_success, BackendRegistry, FinetuneJob,
    ModelBackend, ModelId,
};
use quirkbench::config::{BackendConfig, ConfigError, LoadedConfig, RunConfig};
use quirkbench::conversation::build_declarative_records;
use quirkbench::corpus::{
    augment_declarative, DeclarativeQa, NamesAndBehaviorsQuestion, YesNoQuestion,
};
use quirkbench::evaluation::{
    compare_classes, compare_prior_posterior, exp1_grid_table, exp2_curve_table,
    exp2_identity_table, trainability_gap, Arm, BehaviorPoint, ClassComparison, InferenceRecord,
    PriorPosterior, TrainabilityGap,
};
use quirkbench::experiments::exp1::{run_experiment1, score_exp1_records, Exp1Record};
use quirkbench::experiments::exp2::{
    build_iterative_datasets, evaluate_checkpoint, run_iterative_chain, score_identity_responses,
    BinDataset, Checkpoint, CheckpointEval,
};
use quirkbench::experiments::{build_example_pool, generate_behavior_examples};
use quirkbench::manifest::{
    epoch_seconds, read_jsonl, run_dir_name, sha256_hex, write_atomic, write_jsonl, ManifestError,
    ManifestEvent, ManifestLog, RunLock, RunManifest, MANIFEST_FILE,
};
use quirkbench::persona::{Persona, PersonaRegistry};
use quirkbench::scoring::{ScoredResponse, ScorerRegistry};
use quirkbench::seeds::derive_seed;

/// Polling budget per finetune job; generous because intervals may be long.
const MAX_POLLS: usize = 10_000;

#[derive(Parser)]
#[command(
    name = "quirkbench",
    version,
    about = "Persona behavior scoring, dataset construction, and identity-inference experiments"
)]
struct Cli {
    /// TOML run configuration; built-in defaults (offline demo) when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the parent directory for new run directories.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the backend kind; its settings table resets to empty.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Overrides the worker-thread count for request sweeps.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Exact run directory to create or resume (otherwise a fresh timestamped
    /// directory under the output directory is used).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scores a JSONL file of responses with a persona's behavior scorer.
    Score {
        /// Persona whose scorer to use, e.g. "Axolotl".
        #[arg(long)]
        persona: String,
        /// Scorer registry key overriding the persona's default binding.
        #[arg(long)]
        scorer: Option<String>,
        /// Input JSONL: one {"response": "...", "truth": bool?} per line.
        #[arg(long)]
        input: PathBuf,
        /// Output path for scored JSONL; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Builds every dataset (declarative QA, example pools, iterative bins)
    /// without submitting any finetune.
    BuildDatasets,
    /// Runs the in-context study: declarative finetune, example pools, probe
    /// grid, verdicts.
    RunExp1,
    /// Runs the iterative-finetuning study over both arms, with per-iteration
    /// evaluations and verdicts.
    RunExp2,
    /// Recomputes tables and verdicts from an existing run directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match load_config(&cli) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli, loaded) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Loads the configuration and folds in command-line overrides.
fn load_config(cli: &Cli) -> Result<LoadedConfig, ConfigError> {
    let mut loaded = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::embedded(),
    };
    let config = &mut loaded.config;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(parallelism) = cli.parallelism {
        config.parallelism = parallelism;
    }
    if let Some(kind) = &cli.backend {
        if *kind != config.backend.kind {
            config.backend = BackendConfig {
                kind: kind.clone(),
                settings: toml::Value::Table(toml::map::Map::new()),
            };
        }
    }
    config.validate()?;
    Ok(loaded)
}

fn dispatch(cli: &Cli, loaded: LoadedConfig) -> Result<ExitCode> {
    match &cli.command {
        Command::Score {
            persona,
            scorer,
            input,
            output,
        } => cmd_score(persona, scorer.as_deref(), input, output.as_deref()),
        Command::Report => cmd_report(cli, &loaded),
        Command::BuildDatasets | Command::RunExp1 | Command::RunExp2 => {
            let env = RunEnv::prepare(cli, loaded)?;
            match cli.command {
                Command::BuildDatasets => env.build_datasets(),
                Command::RunExp1 => env.run_exp1(),
                Command::RunExp2 => env.run_exp2(),
                _ => unreachable!("handled above"),
            }
        }
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Score { .. } => "score",
        Command::BuildDatasets => "build-datasets",
        Command::RunExp1 => "run-exp1",
        Command::RunExp2 => "run-exp2",
        Command::Report => "report",
    }
}

// ---------------------------------------------------------------------------
// score

#[derive(Deserialize)]
struct ScoreInput {
    response: String,
    #[serde(default)]
    truth: Option<bool>,
}

#[derive(Serialize)]
struct ScoreOutput<'a> {
    response: &'a str,
    score: f64,
}

fn cmd_score(
    persona_name: &str,
    scorer_key: Option<&str>,
    input: &Path,
    output: Option<&Path>,
) -> Result<ExitCode> {
    let personas = PersonaRegistry::builtin();
    let scorers = ScorerRegistry::builtin();
    let persona = personas.get(persona_name)?;
    let scorer = match scorer_key {
        Some(key) => scorers.get(key)?,
        None => scorers.for_kind(persona.scorer_kind)?,
    };
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreInput = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", input.display(), i + 1))?;
        let score = scorer
            .score(&record.response, record.truth)
            .with_context(|| format!("{} line {}", input.display(), i + 1))?;
        out.push_str(&serde_json::to_string(&ScoreOutput {
            response: &record.response,
            score: score.value(),
        })?);
        out.push('\n');
    }
    match output {
        Some(path) => {
            write_atomic(path, out.as_bytes())?;
            eprintln!("scored responses written to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// run environment and stage protocol

struct RunEnv {
    config: RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
    _lock: RunLock,
    backend: Arc<dyn ModelBackend>,
    personas: PersonaRegistry,
    scorers: ScorerRegistry,
    questions: Vec<YesNoQuestion>,
    probes: Vec<NamesAndBehaviorsQuestion>,
}

impl RunEnv {
    fn prepare(cli: &Cli, loaded: LoadedConfig) -> Result<RunEnv> {
        let config = loaded.config;
        let dir = match &cli.run_dir {
            Some(dir) => dir.clone(),
            None => config
                .output_dir
                .join(run_dir_name(&loaded.digest, epoch_seconds())),
        };
        for sub in ["datasets", "pools", "records", "figures"] {
            std::fs::create_dir_all(dir.join(sub))
                .with_context(|| format!("cannot create run directory {}", dir.display()))?;
        }
        let lock = RunLock::acquire(&dir)?;
        let manifest = RunManifest::open(&dir)?;
        manifest.append(ManifestEvent::RunStarted {
            command: command_name(&cli.command).to_string(),
            config_digest: loaded.digest.clone(),
            seed: config.seed,
        })?;
        let backend = config.create_backend(&BackendRegistry::builtin())?;
        let questions = config.load_questions()?;
        let probes = config.load_probes()?;
        eprintln!(
            "run directory {} (config {}, backend {})",
            dir.display(),
            loaded.source,
            backend.name()
        );
        Ok(RunEnv {
            config,
            dir,
            manifest,
            _lock: lock,
            backend,
            personas: PersonaRegistry::builtin(),
            scorers: ScorerRegistry::builtin(),
            questions,
            probes,
        })
    }

    fn log(&self) -> Result<ManifestLog> {
        Ok(ManifestLog::load(&self.dir)?)
    }

    fn poll_interval(&self) -> Duration {
        Duration::from_secs(self.config.models.finetune_poll_seconds)
    }

    /// Run-dir-relative path string for manifest events.
    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    fn complete_stage(&self, stage: &str) -> Result<()> {
        self.manifest.append(ManifestEvent::StageCompleted {
            stage: stage.to_string(),
        })?;
        Ok(())
    }

    /// Runs a stage body, recording a failure event if it errors.
    fn with_stage<T>(&self, stage: &str, body: impl FnOnce() -> Result<T>) -> Result<T> {
        match body() {
            Ok(value) => Ok(value),
            Err(e) => {
                let _ = self.manifest.append(ManifestEvent::Failure {
                    stage: stage.to_string(),
                    detail: format!("{e:#}"),
                });
                Err(e).with_context(|| format!("stage {stage} failed"))
            }
        }
    }

    /// Writes a dataset-like artifact and records it with its digest.
    fn record_dataset(&self, stage: &str, path: &Path, bytes: &[u8], records: usize) -> Result<()> {
        write_atomic(path, bytes)?;
        self.manifest.append(ManifestEvent::DatasetBuilt {
            stage: stage.to_string(),
            path: self.rel(path),
            digest: sha256_hex(bytes),
            records,
        })?;
        Ok(())
    }

    fn record_records(&self, stage: &str, path: &Path, count: usize) -> Result<()> {
        self.manifest.append(ManifestEvent::RecordsWritten {
            stage: stage.to_string(),
            path: self.rel(path),
            count,
        })?;
        Ok(())
    }

    // -- declarative datasets and checkpoint --------------------------------

    /// Builds (or reloads) the per-persona declarative QA datasets, in
    /// registry order.
    fn declarative_qa(&self) -> Result<Vec<DeclarativeQa>> {
        let log = self.log()?;
        let mut all = Vec::new();
        for persona in self.personas.iter() {
            let stage = format!("declarative:{}", persona.name);
            let path = self.dataset_path(&format!(
                "declarative_{}.jsonl",
                persona.name.to_lowercase()
            ));
            if log.stage_completed(&stage) {
                verify_digest(&log, &stage, &path)?;
                let pairs: Vec<DeclarativeQa> = read_jsonl(&path)?;
                let want = self.config.datasets.declarative_per_persona;
                if pairs.len() != want {
                    bail!(
                        "{} holds {} pairs but the configuration expects {want}",
                        path.display(),
                        pairs.len()
                    );
                }
                eprintln!("[skip] {stage}: {} pairs verified", pairs.len());
                all.extend(pairs);
                continue;
            }
            let pairs = self.with_stage(&stage, || {
                let settings = self.config.models.generation_settings();
                let outcome = augment_declarative(
                    persona,
                    self.config.datasets.declarative_per_persona,
                    self.backend.as_ref(),
                    &settings,
                    &self.scorers,
                    self.config.datasets.augmentation_batch_size,
                )?;
                let mut bytes = Vec::new();
                for pair in &outcome.pairs {
                    serde_json::to_writer(&mut bytes, pair)?;
                    bytes.push(b'\n');
                }
                self.record_dataset(&stage, &path, &bytes, outcome.pairs.len())?;
                if !outcome.rejected.is_empty() {
                    let rejects = self.dataset_path(&format!(
                        "declarative_rejects_{}.jsonl",
                        persona.name.to_lowercase()
                    ));
                    write_jsonl(&rejects, &outcome.rejected)?;
                }
                eprintln!(
                    "[done] {stage}: {} pairs in {} generator calls, {} rejected",
                    outcome.pairs.len(),
                    outcome.attempts,
                    outcome.rejected.len()
                );
                self.complete_stage(&stage)?;
                Ok(outcome.pairs)
            })?;
            all.extend(pairs);
        }
        Ok(all)
    }

    /// Finetunes the base model on the merged declarative dataset (or reuses
    /// the recorded checkpoint). This checkpoint doubles as iteration 0 of
    /// the declarative-first arm.
    fn declarative_checkpoint(&self, qa: &[DeclarativeQa]) -> Result<Checkpoint> {
        const STAGE: &str = "finetune:declarative";
        let log = self.log()?;
        let records = build_declarative_records(qa)?;
        let digest = dataset_digest(&records);
        if log.stage_completed(STAGE) {
            let model = log.checkpoint(Arm::Treatment, 0).ok_or_else(|| {
                anyhow!("{STAGE} is marked complete but no checkpoint was recorded")
            })?;
            if let Some(recorded) = log.checkpoint_dataset_digest(Arm::Treatment, 0) {
                if recorded != digest {
                    return Err(ManifestError::DigestMismatch {
                        what: "declarative training dataset".to_string(),
                        recorded: recorded.to_string(),
                        recomputed: digest,
                    }
                    .into());
                }
            }
            eprintln!("[skip] {STAGE}: checkpoint {}", model.as_str());
            return Ok(Checkpoint {
                arm: Arm::Treatment,
                iteration: 0,
                model: model.clone(),
            });
        }
        self.with_stage(STAGE, || {
            let path = self.dataset_path("declarative_merged.jsonl");
            let serialized = serialize_finetune_records(&records);
            self.record_dataset(STAGE, &path, serialized.as_bytes(), records.len())?;
            let base = self.config.models.base.clone();
            let mut job = FinetuneJob::new(base.clone(), records.clone());
            job.hyperparameters = self.config.models.hyperparameters;
            let handle = self.backend.submit_finetune(job)?;
            self.manifest.append(ManifestEvent::FinetuneSubmitted {
                arm: Arm::Treatment,
                iteration: 0,
                job: handle.clone(),
                base_model: base,
                dataset_digest: digest.clone(),
            })?;
            let model = wait_for_success(
                self.backend.as_ref(),
                &handle,
                self.poll_interval(),
                MAX_POLLS,
            )?;
            self.manifest.append(ManifestEvent::CheckpointRecorded {
                arm: Arm::Treatment,
                iteration: 0,
                model: model.clone(),
                job: Some(handle),
                dataset_digest: Some(digest),
            })?;
            eprintln!("[done] {STAGE}: checkpoint {}", model.as_str());
            self.complete_stage(STAGE)?;
            Ok(Checkpoint {
                arm: Arm::Treatment,
                iteration: 0,
                model,
            })
        })
    }

    // -- in-context study ----------------------------------------------------

    /// Builds (or reloads) the filtered example pool for each listed persona.
    fn example_pools(&self) -> Result<BTreeMap<String, Vec<ScoredResponse>>> {
        let log = self.log()?;
        let mut pools = BTreeMap::new();
        for name in &self.config.exp1.persona_names {
            let persona = self.personas.get(name)?;
            let stage = format!("pool:{name}");
            let path = self
                .dir
                .join("pools")
                .join(format!("{}.jsonl", name.to_lowercase()));
            if log.stage_completed(&stage) {
                verify_digest(&log, &stage, &path)?;
                let pool: Vec<ScoredResponse> = read_jsonl(&path)?;
                eprintln!("[skip] {stage}: {} examples verified", pool.len());
                pools.insert(name.clone(), pool);
                continue;
            }
            let pool = self.with_stage(&stage, || {
                let settings = self.config.models.generation_settings();
                let scored = generate_behavior_examples(
                    persona,
                    &self.questions,
                    self.config.exp1.generation_question_count,
                    self.backend.as_ref(),
                    &settings,
                    &self.scorers,
                    self.config.parallelism,
                )?;
                let threshold = self
                    .config
                    .exp1
                    .effective_filter_threshold(persona, &self.scorers);
                let selection = build_example_pool(
                    &scored,
                    persona,
                    threshold,
                    self.config.exp1.example_pool_size,
                )?;
                if selection.shortfall {
                    eprintln!(
                        "warning: {stage} kept only {} of {} requested examples",
                        selection.selected.len(),
                        self.config.exp1.example_pool_size
                    );
                }
                let mut bytes = Vec::new();
                for response in &selection.selected {
                    serde_json::to_writer(&mut bytes, response)?;
                    bytes.push(b'\n');
                }
                self.record_dataset(&stage, &path, &bytes, selection.selected.len())?;
                eprintln!(
                    "[done] {stage}: {} examples at threshold {threshold}",
                    selection.selected.len()
                );
                self.complete_stage(&stage)?;
                Ok(selection.selected)
            })?;
            pools.insert(name.clone(), pool);
        }
        Ok(pools)
    }

    fn exp1_records(
        &self,
        pools: &BTreeMap<String, Vec<ScoredResponse>>,
        subject: &ModelId,
    ) -> Result<Vec<Exp1Record>> {
        const STAGE: &str = "exp1:records";
        let log = self.log()?;
        let path = self.record_path("exp1_records.jsonl");
        if log.stage_completed(STAGE) {
            let records: Vec<Exp1Record> = read_jsonl(&path)?;
            eprintln!("[skip] {STAGE}: {} records reloaded", records.len());
            return Ok(records);
        }
        self.with_stage(STAGE, || {
            let settings = self
                .config
                .models
                .evaluation_settings()
                .for_model(subject.clone());
            let records = run_experiment1(
                &self.config.exp1,
                pools,
                &self.probes,
                self.backend.as_ref(),
                &settings,
                self.config.parallelism,
            )?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!(
                    "warning: {failed} of {} probe requests failed",
                    records.len()
                );
            }
            write_jsonl(&path, &records)?;
            self.record_records(STAGE, &path, records.len())?;
            eprintln!("[done] {STAGE}: {} records", records.len());
            self.complete_stage(STAGE)?;
            Ok(records)
        })
    }

    fn exp1_figures(&self, records: &[Exp1Record]) -> Result<()> {
        const STAGE: &str = "figures:exp1";
        let log = self.log()?;
        let grid_path = self.figure_path("exp1_grid.tsv");
        let verdict_path = self.figure_path("exp1_verdicts.json");
        if log.stage_completed(STAGE) {
            let verdicts: Exp1Verdicts =
                serde_json::from_str(&std::fs::read_to_string(&verdict_path)?)?;
            eprintln!("[skip] {STAGE}");
            print!("{}", std::fs::read_to_string(&grid_path)?);
            print_exp1_verdicts(&verdicts);
            return Ok(());
        }
        self.with_stage(STAGE, || {
            let scoring = score_exp1_records(records, &self.personas, &self.scorers)?;
            if scoring.failed > 0 || scoring.unscoreable > 0 {
                eprintln!(
                    "warning: {} failed and {} unscoreable probe responses excluded",
                    scoring.failed, scoring.unscoreable
                );
            }
            let inference_path = self.record_path("exp1_inference.jsonl");
            write_jsonl(&inference_path, &scoring.inference)?;
            self.record_records(STAGE, &inference_path, scoring.inference.len())?;
            let table = exp1_grid_table(
                &scoring.inference,
                &self.config.exp1.persona_names,
                &self.config.exp1.k_values,
            )?;
            write_atomic(&grid_path, table.as_bytes())?;
            self.record_records(STAGE, &grid_path, table.lines().count().saturating_sub(1))?;
            let verdicts = exp1_verdicts(
                &scoring.inference,
                &self.config.exp1.persona_names,
                &self.config.exp1.k_values,
            )?;
            write_atomic(
                &verdict_path,
                serde_json::to_string_pretty(&verdicts)?.as_bytes(),
            )?;
            print!("{table}");
            print_exp1_verdicts(&verdicts);
            eprintln!("[done] {STAGE}: {}", grid_path.display());
            self.complete_stage(STAGE)?;
            Ok(())
        })
    }

    // -- iterative study ------------------------------------------------------

    /// Builds (or reloads) the per-bin iterative finetune datasets.
    fn iterative_datasets(&self) -> Result<Vec<BinDataset>> {
        const STAGE: &str = "exp2:datasets";
        let log = self.log()?;
        let sidecar = self.dataset_path("iterative_bins.json");
        let partition = self.config.exp2.partition()?;
        if log.stage_completed(STAGE) {
            for index in 0..partition.bin_count() {
                let path = self.dataset_path(&format!("iterative_bin{index}.jsonl"));
                verify_digest(&log, &format!("exp2:dataset:bin{index}"), &path)?;
            }
            let datasets: Vec<BinDataset> =
                serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
            eprintln!("[skip] {STAGE}: {} bins verified", datasets.len());
            return Ok(datasets);
        }
        self.with_stage(STAGE, || {
            let persona = self.personas.get(&self.config.exp2.persona_name)?;
            let settings = self.config.models.generation_settings();
            let built = build_iterative_datasets(
                &self.config.exp2,
                persona,
                &self.questions,
                self.backend.as_ref(),
                &settings,
                &self.scorers,
                self.config.parallelism,
            )?;
            let report = &built.threshold_report;
            if !report.passed {
                bail!(
                    "mean behavior score {:.4} does not sit below the lowest bin threshold {}; \
                     the untuned generator is already past the first bin, so the bins cannot \
                     measure progress — raise the thresholds or change the generator",
                    report.mean,
                    report.tau1
                );
            }
            eprintln!(
                "threshold check passed: mean score {:.4} < {}",
                report.mean, report.tau1
            );
            let scored_path = self.record_path("exp2_generation_scored.jsonl");
            write_jsonl(&scored_path, &built.scored)?;
            self.record_records(STAGE, &scored_path, built.scored.len())?;
            for dataset in &built.datasets {
                let path = self.dataset_path(&format!("iterative_bin{}.jsonl", dataset.bin_index));
                let serialized = serialize_finetune_records(&dataset.records);
                self.record_dataset(
                    &format!("exp2:dataset:bin{}", dataset.bin_index),
                    &path,
                    serialized.as_bytes(),
                    dataset.records.len(),
                )?;
                if dataset.underfilled {
                    eprintln!(
                        "warning: bin {} ({}) holds only {} of {} requested records",
                        dataset.bin_index,
                        dataset.label,
                        dataset.records.len(),
                        self.config.exp2.records_per_bin
                    );
                }
                eprintln!(
                    "[done] bin {} {}: {} candidates, kept {}",
                    dataset.bin_index,
                    dataset.label,
                    dataset.candidates,
                    dataset.records.len()
                );
            }
            write_atomic(
                &sidecar,
                serde_json::to_string_pretty(&built.datasets)?.as_bytes(),
            )?;
            eprintln!(
                "[done] {STAGE}: {} bins, {} responses under the lowest threshold",
                built.datasets.len(),
                built.excluded
            );
            self.complete_stage(STAGE)?;
            Ok(built.datasets)
        })
    }

    /// Runs (or resumes) one arm's finetune chain.
    fn chain(
        &self,
        arm: Arm,
        start_model: &ModelId,
        datasets: &[BinDataset],
    ) -> Result<Vec<Checkpoint>> {
        let stage = format!("exp2:chain:{arm}");
        let log = self.log()?;
        if log.stage_completed(&stage) {
            let mut checkpoints = Vec::with_capacity(datasets.len() + 1);
            for iteration in 0..=datasets.len() {
                let model = log.checkpoint(arm, iteration).ok_or_else(|| {
                    anyhow!(
                        "{stage} is marked complete but iteration {iteration} has no checkpoint"
                    )
                })?;
                checkpoints.push(Checkpoint {
                    arm,
                    iteration,
                    model: model.clone(),
                });
            }
            eprintln!("[skip] {stage}: {} checkpoints reloaded", checkpoints.len());
            return Ok(checkpoints);
        }
        // The chain writes its own submission/checkpoint/failure events.
        let checkpoints = run_iterative_chain(
            arm,
            start_model,
            datasets,
            self.config.models.hyperparameters,
            self.backend.as_ref(),
            &self.manifest,
            &log,
            self.poll_interval(),
        )
        .with_context(|| format!("stage {stage} failed"))?;
        eprintln!("[done] {stage}: {} checkpoints", checkpoints.len());
        self.complete_stage(&stage)?;
        Ok(checkpoints)
    }

    /// Sweeps behavior questions and identity probes over one checkpoint (or
    /// reloads the stored evaluation).
    fn checkpoint_eval(
        &self,
        checkpoint: &Checkpoint,
        persona: &Persona,
    ) -> Result<CheckpointEval> {
        let stage = format!("exp2:eval:{}:{}", checkpoint.arm, checkpoint.iteration);
        let log = self.log()?;
        let path = eval_path(&self.dir, checkpoint.arm, checkpoint.iteration);
        if log.stage_completed(&stage) {
            let eval: CheckpointEval = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if eval.model != checkpoint.model {
                bail!(
                    "{} evaluates model {} but the chain produced {}; refusing to mix runs",
                    path.display(),
                    eval.model.as_str(),
                    checkpoint.model.as_str()
                );
            }
            eprintln!("[skip] {stage}");
            return Ok(eval);
        }
        self.with_stage(&stage, || {
            let settings = self.config.models.evaluation_settings();
            let eval = evaluate_checkpoint(
                checkpoint,
                persona,
                &self.questions,
                self.config.exp2.eval_question_count,
                &self.probes,
                self.backend.as_ref(),
                &settings,
                &self.scorers,
                self.config.parallelism,
            )?;
            if !eval.failures.is_empty() {
                eprintln!(
                    "warning: {} requests failed during {stage}",
                    eval.failures.len()
                );
            }
            write_atomic(&path, serde_json::to_string_pretty(&eval)?.as_bytes())?;
            self.record_records(&stage, &path, eval.behavior.len() + eval.identity.len())?;
            eprintln!(
                "[done] {stage}: {} behavior scores, {} identity probes",
                eval.behavior.len(),
                eval.identity.len()
            );
            self.complete_stage(&stage)?;
            Ok(eval)
        })
    }

    fn exp2_figures(&self, evals: &[CheckpointEval], persona: &Persona) -> Result<()> {
        const STAGE: &str = "figures:exp2";
        let log = self.log()?;
        let curve_path = self.figure_path("exp2_curve.tsv");
        let identity_path = self.figure_path("exp2_identity.tsv");
        let verdict_path = self.figure_path("exp2_verdicts.json");
        if log.stage_completed(STAGE) {
            let verdicts: Exp2Verdicts =
                serde_json::from_str(&std::fs::read_to_string(&verdict_path)?)?;
            eprintln!("[skip] {STAGE}");
            print!("{}", std::fs::read_to_string(&curve_path)?);
            print!("{}", std::fs::read_to_string(&identity_path)?);
            print_exp2_verdicts(&verdicts);
            return Ok(());
        }
        self.with_stage(STAGE, || {
            let last_iteration = self.config.exp2.partition()?.bin_count();
            let points: Vec<BehaviorPoint> = evals
                .iter()
                .map(|e| BehaviorPoint {
                    arm: e.arm,
                    iteration: e.iteration,
                    scores: e.behavior.iter().map(|r| r.score.value()).collect(),
                })
                .collect();
            let curve = exp2_curve_table(
                &points,
                last_iteration,
                derive_seed(self.config.seed, "exp2:curve"),
            )?;
            write_atomic(&curve_path, curve.as_bytes())?;
            self.record_records(STAGE, &curve_path, curve.lines().count().saturating_sub(1))?;

            let mut identity = Vec::new();
            let mut unscoreable = 0usize;
            for eval in evals {
                let scored =
                    score_identity_responses(eval, persona, &self.personas, &self.scorers)?;
                identity.extend(scored.records);
                unscoreable += scored.unscoreable;
            }
            if unscoreable > 0 {
                eprintln!("warning: {unscoreable} identity responses were unscoreable");
            }
            let inference_path = self.record_path("exp2_identity_inference.jsonl");
            write_jsonl(&inference_path, &identity)?;
            self.record_records(STAGE, &inference_path, identity.len())?;
            let identity_table = exp2_identity_table(&identity, last_iteration)?;
            write_atomic(&identity_path, identity_table.as_bytes())?;
            self.record_records(
                STAGE,
                &identity_path,
                identity_table.lines().count().saturating_sub(1),
            )?;

            let verdicts = exp2_verdicts(
                evals,
                &identity,
                &persona.name,
                last_iteration,
                self.config.seed,
            )?;
            write_atomic(
                &verdict_path,
                serde_json::to_string_pretty(&verdicts)?.as_bytes(),
            )?;
            print!("{curve}");
            print!("{identity_table}");
            print_exp2_verdicts(&verdicts);
            eprintln!("[done] {STAGE}: {}", curve_path.display());
            self.complete_stage(STAGE)?;
            Ok(())
        })
    }

    // -- commands -------------------------------------------------------------

    fn build_datasets(self) -> Result<ExitCode> {
        self.declarative_qa()?;
        self.example_pools()?;
        self.iterative_datasets()?;
        println!("datasets ready under {}", self.dir.display());
        Ok(ExitCode::SUCCESS)
    }

    fn run_exp1(self) -> Result<ExitCode> {
        let qa = self.declarative_qa()?;
        let subject = self.declarative_checkpoint(&qa)?;
        let pools = self.example_pools()?;
        let records = self.exp1_records(&pools, &subject.model)?;
        self.exp1_figures(&records)?;
        println!("in-context study complete: {}", self.dir.display());
        Ok(ExitCode::SUCCESS)
    }

    fn run_exp2(self) -> Result<ExitCode> {
        let qa = self.declarative_qa()?;
        let declarative = self.declarative_checkpoint(&qa)?;
        let datasets = self.iterative_datasets()?;
        let treatment = self.chain(Arm::Treatment, &declarative.model, &datasets)?;
        let control = self.chain(Arm::Control, &self.config.models.base.clone(), &datasets)?;
        let persona = self.personas.get(&self.config.exp2.persona_name)?.clone();
        let mut evals = Vec::with_capacity(treatment.len() + control.len());
        for checkpoint in treatment.iter().chain(control.iter()) {
            evals.push(self.checkpoint_eval(checkpoint, &persona)?);
        }
        self.exp2_figures(&evals, &persona)?;
        println!("iterative study complete: {}", self.dir.display());
        Ok(ExitCode::SUCCESS)
    }

    // -- paths ------------------------------------------------------------------

    fn dataset_path(&self, file: &str) -> PathBuf {
        self.dir.join("datasets").join(file)
    }

    fn record_path(&self, file: &str) -> PathBuf {
        self.dir.join("records").join(file)
    }

    fn figure_path(&self, file: &str) -> PathBuf {
        self.dir.join("figures").join(file)
    }
}

fn eval_path(dir: &Path, arm: Arm, iteration: usize) -> PathBuf {
    dir.join("records")
        .join(format!("exp2_eval_{arm}_{iteration}.json"))
}

/// Re-hashes a recorded dataset file and compares against the manifest.
fn verify_digest(log: &ManifestLog, stage: &str, path: &Path) -> Result<()> {
    let recorded = log.dataset_digest(stage).ok_or_else(|| {
        anyhow!("stage {stage} is marked complete but recorded no dataset digest")
    })?;
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let recomputed = sha256_hex(&bytes);
    if recorded != recomputed {
        return Err(ManifestError::DigestMismatch {
            what: path.display().to_string(),
            recorded: recorded.to_string(),
            recomputed,
        }
        .into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verdicts

#[derive(Serialize, Deserialize)]
struct Exp1Verdicts {
    /// Per (k, persona): does the persona's own name-inference frequency beat
    /// every other persona's?
    class_comparison: Vec<(usize, ClassComparison)>,
    /// Per (k > 0, persona): does the frequency exceed its k = 0 prior?
    prior_posterior: Vec<(usize, PriorPosterior)>,
}

fn exp1_cell(inference: &[InferenceRecord], persona: &str, k: usize) -> Vec<InferenceRecord> {
    inference
        .iter()
        .filter(|r| r.persona == persona && r.k == Some(k))
        .cloned()
        .collect()
}

fn exp1_verdicts(
    inference: &[InferenceRecord],
    personas: &[String],
    k_values: &[usize],
) -> Result<Exp1Verdicts> {
    let mut class_comparison = Vec::new();
    let mut prior_posterior = Vec::new();
    for persona in personas {
        for &k in k_values {
            let cell = exp1_cell(inference, persona, k);
            class_comparison.push((k, compare_classes(&cell, persona)?));
        }
        if k_values.contains(&0) {
            let prior = exp1_cell(inference, persona, 0);
            for &k in k_values.iter().filter(|&&k| k > 0) {
                let posterior = exp1_cell(inference, persona, k);
                prior_posterior.push((k, compare_prior_posterior(&prior, &posterior, persona)?));
            }
        }
    }
    Ok(Exp1Verdicts {
        class_comparison,
        prior_posterior,
    })
}

fn format_frequencies(comparison: &ClassComparison) -> String {
    comparison
        .frequencies
        .iter()
        .map(|(name, est)| format!("{name}={:.3}", est.proportion))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_exp1_verdicts(verdicts: &Exp1Verdicts) {
    for (k, c) in &verdicts.class_comparison {
        println!(
            "verdict class-comparison persona={} k={k} satisfied={} {}",
            c.persona,
            c.satisfied,
            format_frequencies(c)
        );
    }
    for (k, p) in &verdicts.prior_posterior {
        println!(
            "verdict prior-posterior persona={} k=0->{k} satisfied={} prior={:.3} \
             posterior={:.3} intervals_overlap={}",
            p.persona, p.satisfied, p.prior.proportion, p.posterior.proportion, p.intervals_overlap
        );
    }
}

#[derive(Serialize, Deserialize)]
struct Exp2Verdicts {
    /// Per iteration: is the declarative-first arm's mean behavior score
    /// strictly above the iterative-only arm's?
    trainability_gap: Vec<TrainabilityGap>,
    /// Per iteration, over the declarative-first arm's identity sweeps.
    class_comparison: Vec<(usize, ClassComparison)>,
    /// Identity frequency, declarative-first arm, iteration 0 vs the last.
    prior_posterior: PriorPosterior,
}

fn exp2_verdicts(
    evals: &[CheckpointEval],
    identity: &[InferenceRecord],
    persona: &str,
    last_iteration: usize,
    seed: u64,
) -> Result<Exp2Verdicts> {
    let find = |arm: Arm, iteration: usize| -> Result<&CheckpointEval> {
        evals
            .iter()
            .find(|e| e.arm == arm && e.iteration == iteration)
            .ok_or_else(|| anyhow!("no evaluation for {arm} iteration {iteration}"))
    };
    let mut gaps = Vec::new();
    for iteration in 0..=last_iteration {
        let pairs = |eval: &CheckpointEval| -> Vec<(usize, f64)> {
            eval.behavior
                .iter()
                .map(|r| (r.question_id, r.score.value()))
                .collect()
        };
        let treatment = pairs(find(Arm::Treatment, iteration)?);
        let control = pairs(find(Arm::Control, iteration)?);
        gaps.push(trainability_gap(
            &treatment,
            &control,
            iteration,
            derive_seed(seed, &format!("gap:{iteration}")),
        )?);
    }
    let identity_cell = |iteration: usize| -> Vec<InferenceRecord> {
        identity
            .iter()
            .filter(|r| r.arm == Some(Arm::Treatment) && r.iteration == Some(iteration))
            .cloned()
            .collect()
    };
    let mut class_comparison = Vec::new();
    for iteration in 0..=last_iteration {
        class_comparison.push((
            iteration,
            compare_classes(&identity_cell(iteration), persona)?,
        ));
    }
    let prior_posterior =
        compare_prior_posterior(&identity_cell(0), &identity_cell(last_iteration), persona)?;
    Ok(Exp2Verdicts {
        trainability_gap: gaps,
        class_comparison,
        prior_posterior,
    })
}

fn print_exp2_verdicts(verdicts: &Exp2Verdicts) {
    for gap in &verdicts.trainability_gap {
        println!(
            "verdict trainability-gap iteration={} satisfied={} treatment={:.3} control={:.3} \
             difference={:.3} ci=[{:.3},{:.3}]",
            gap.iteration,
            gap.satisfied,
            gap.treatment_mean,
            gap.control_mean,
            gap.difference,
            gap.ci_low,
            gap.ci_high
        );
    }
    for (iteration, c) in &verdicts.class_comparison {
        println!(
            "verdict class-comparison arm=treatment iteration={iteration} satisfied={} {}",
            c.satisfied,
            format_frequencies(c)
        );
    }
    let p = &verdicts.prior_posterior;
    println!(
        "verdict prior-posterior arm=treatment persona={} satisfied={} prior={:.3} \
         posterior={:.3} intervals_overlap={}",
        p.persona, p.satisfied, p.prior.proportion, p.posterior.proportion, p.intervals_overlap
    );
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(cli: &Cli, loaded: &LoadedConfig) -> Result<ExitCode> {
    let Some(dir) = &cli.run_dir else {
        eprintln!("report requires --run-dir pointing at an existing run directory");
        return Ok(ExitCode::from(2));
    };
    if !dir.join(MANIFEST_FILE).exists() {
        bail!(
            "{} holds no {MANIFEST_FILE}; nothing to report",
            dir.display()
        );
    }
    let log = ManifestLog::load(dir)?;
    let config = &loaded.config;
    let personas = PersonaRegistry::builtin();
    let scorers = ScorerRegistry::builtin();
    println!("run directory: {}", dir.display());

    // Verify every completed dataset stage against its recorded digest.
    let mut dataset_files: Vec<(String, PathBuf)> = Vec::new();
    for persona in personas.iter() {
        dataset_files.push((
            format!("declarative:{}", persona.name),
            dir.join("datasets")
                .join(format!("declarative_{}.jsonl", persona.name.to_lowercase())),
        ));
    }
    dataset_files.push((
        "finetune:declarative".to_string(),
        dir.join("datasets").join("declarative_merged.jsonl"),
    ));
    for name in &config.exp1.persona_names {
        dataset_files.push((
            format!("pool:{name}"),
            dir.join("pools")
                .join(format!("{}.jsonl", name.to_lowercase())),
        ));
    }
    for index in 0..config.exp2.partition()?.bin_count() {
        dataset_files.push((
            format!("exp2:dataset:bin{index}"),
            dir.join("datasets")
                .join(format!("iterative_bin{index}.jsonl")),
        ));
    }
    let mut problems = Vec::new();
    let mut verified = 0usize;
    for (stage, path) in &dataset_files {
        let completed = log.stage_completed(stage)
            || (stage.starts_with("exp2:dataset:") && log.stage_completed("exp2:datasets"));
        if !completed {
            continue;
        }
        match verify_digest(&log, stage, path) {
            Ok(()) => verified += 1,
            Err(e) => problems.push(format!("{stage}: {e:#}")),
        }
    }
    println!("verified dataset digests: {verified}");

    let mut reported_any = false;
    if log.stage_completed("figures:exp1") {
        match report_exp1(dir, config) {
            Ok(()) => reported_any = true,
            Err(e) => problems.push(format!("figures:exp1: {e:#}")),
        }
    } else {
        println!("in-context study: not completed");
    }
    if log.stage_completed("figures:exp2") {
        match report_exp2(dir, config, &personas, &scorers) {
            Ok(()) => reported_any = true,
            Err(e) => problems.push(format!("figures:exp2: {e:#}")),
        }
    } else {
        println!("iterative study: not completed");
    }

    for (stage, detail) in log.failures() {
        println!("failure recorded at {stage}: {detail}");
    }
    for problem in &problems {
        eprintln!("verification problem: {problem}");
    }
    if reported_any && problems.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

/// Recomputes the in-context table and verdicts from stored inference records.
fn report_exp1(dir: &Path, config: &RunConfig) -> Result<()> {
    let inference: Vec<InferenceRecord> = read_jsonl(&dir.join("records/exp1_inference.jsonl"))?;
    let table = exp1_grid_table(
        &inference,
        &config.exp1.persona_names,
        &config.exp1.k_values,
    )?;
    println!("in-context study ({} scored probes):", inference.len());
    print!("{table}");
    let verdicts = exp1_verdicts(
        &inference,
        &config.exp1.persona_names,
        &config.exp1.k_values,
    )?;
    print_exp1_verdicts(&verdicts);
    Ok(())
}

/// Recomputes the iterative-study tables and verdicts from stored
/// per-checkpoint evaluations.
fn report_exp2(
    dir: &Path,
    config: &RunConfig,
    personas: &PersonaRegistry,
    scorers: &ScorerRegistry,
) -> Result<()> {
    let last_iteration = config.exp2.partition()?.bin_count();
    let persona = personas.get(&config.exp2.persona_name)?;
    let mut evals = Vec::new();
    for arm in [Arm::Treatment, Arm::Control] {
        for iteration in 0..=last_iteration {
            let path = eval_path(dir, arm, iteration);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let eval: CheckpointEval = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse {}", path.display()))?;
            evals.push(eval);
        }
    }
    let points: Vec<BehaviorPoint> = evals
        .iter()
        .map(|e| BehaviorPoint {
            arm: e.arm,
            iteration: e.iteration,
            scores: e.behavior.iter().map(|r| r.score.value()).collect(),
        })
        .collect();
    let curve = exp2_curve_table(
        &points,
        last_iteration,
        derive_seed(config.seed, "exp2:curve"),
    )?;
    let mut identity = Vec::new();
    for eval in &evals {
        identity.extend(score_identity_responses(eval, persona, personas, scorers)?.records);
    }
    let identity_table = exp2_identity_table(&identity, last_iteration)?;
    println!("iterative study ({} checkpoint evaluations):", evals.len());
    print!("{curve}");
    print!("{identity_table}");
    let verdicts = exp2_verdicts(
        &evals,
        &identity,
        &persona.name,
        last_iteration,
        config.seed,
    )?;
    print_exp2_verdicts(&verdicts);
    Ok(())
}
