//! Run configuration: one TOML file naming the backend, corpora, models,
//! seed, and experiment parameters. Every field has a default, and the
//! defaults describe a complete offline demo run against the embedded
//! scripted backend — `quirkbench run-exp1` works with no config file at all.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, BackendRegistry, ChatSettings, Hyperparameters, ModelBackend, ModelId,
};
use crate::corpus::{
    builtin_names_and_behaviors, builtin_question_sample, load_names_and_behaviors,
    load_yes_no_corpus, CorpusError, NamesAndBehaviorsQuestion, YesNoQuestion,
};
use crate::experiments::exp2::Exp2Config;
use crate::experiments::Exp1Config;
use crate::manifest::sha256_hex;

/// The response script behind the default demo backend.
pub const DEMO_SCRIPT_TOML: &str = include_str!("../data/demo_script.toml");

/// Errors from configuration loading and validation.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which model provider to talk to, selected by registry name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_backend_kind")]
    pub kind: String,
    /// Raw settings table handed to the backend's factory.
    #[serde(default = "empty_settings")]
    pub settings: toml::Value,
}

fn default_backend_kind() -> String {
    "scripted".to_string()
}

fn empty_settings() -> toml::Value {
    toml::Value::Table(toml::map::Map::new())
}

impl Default for BackendConfig {
    /// The scripted backend loaded with the embedded demo script.
    fn default() -> Self {
        let script: toml::Value =
            toml::from_str(DEMO_SCRIPT_TOML).expect("embedded demo script parses");
        let mut settings = toml::map::Map::new();
        settings.insert("script".to_string(), script);
        BackendConfig {
            kind: default_backend_kind(),
            settings: toml::Value::Table(settings),
        }
    }
}

/// Optional corpus overrides; the embedded corpora serve when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSONL of `{question, answer}` yes/no records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub questions_path: Option<PathBuf>,
    /// One identity probe per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes_path: Option<PathBuf>,
}

/// Model ids and request shaping shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Answers generation and augmentation prompts.
    pub generator: ModelId,
    /// Starting point of every finetune (declarative and control chain).
    pub base: ModelId,
    /// Sampling temperature when generating behavior examples.
    pub generation_temperature: f64,
    /// Sampling temperature when probing and evaluating checkpoints.
    pub evaluation_temperature: f64,
    pub max_output_length: usize,
    /// Seconds between finetune-status polls (terminal states never wait).
    pub finetune_poll_seconds: u64,
    /// Applied to every finetune job, declarative and iterative alike.
    pub hyperparameters: Hyperparameters,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            generator: ModelId::new("demo-generator"),
            base: ModelId::new("demo-base"),
            generation_temperature: 1.0,
            evaluation_temperature: 0.0,
            max_output_length: 512,
            finetune_poll_seconds: 5,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl ModelsConfig {
    /// Settings for behavior-example generation and dataset augmentation.
    pub fn generation_settings(&self) -> ChatSettings {
        ChatSettings {
            model: self.generator.clone(),
            temperature: self.generation_temperature,
            max_output_length: self.max_output_length,
        }
    }

    /// Settings for probing and checkpoint evaluation; callers swap in the
    /// model under test via [`ChatSettings::for_model`].
    pub fn evaluation_settings(&self) -> ChatSettings {
        ChatSettings {
            model: self.base.clone(),
            temperature: self.evaluation_temperature,
            max_output_length: self.max_output_length,
        }
    }
}

/// Declarative-dataset construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetsConfig {
    /// QA pairs per persona in the declarative finetune dataset.
    pub declarative_per_persona: usize,
    /// Variations requested per augmentation call.
    pub augmentation_batch_size: usize,
}

impl Default for DatasetsConfig {
    fn default() -> Self {
        DatasetsConfig {
            declarative_per_persona: 300,
            augmentation_batch_size: 10,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Parent directory for run directories.
    pub output_dir: PathBuf,
    /// Worker threads for request sweeps.
    pub parallelism: usize,
    pub backend: BackendConfig,
    pub corpus: CorpusConfig,
    pub models: ModelsConfig,
    pub datasets: DatasetsConfig,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: PathBuf::from("runs"),
            parallelism: 4,
            backend: BackendConfig::default(),
            corpus: CorpusConfig::default(),
            models: ModelsConfig::default(),
            datasets: DatasetsConfig::default(),
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
        }
    }
}

/// A configuration together with where it came from and the digest that names
/// its run directories.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// SHA-256 of the configuration text.
    pub digest: String,
    /// File path, or "embedded" for the built-in defaults.
    pub source: String,
}

impl RunConfig {
    /// Loads and validates a TOML configuration file.
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            digest: sha256_hex(text.as_bytes()),
            source: path.display().to_string(),
        })
    }

    /// The built-in defaults (scripted demo backend, embedded corpora).
    pub fn embedded() -> LoadedConfig {
        let config = RunConfig::default();
        let text = toml::to_string(&config).expect("default config serializes");
        LoadedConfig {
            digest: sha256_hex(text.as_bytes()),
            config,
            source: "embedded".to_string(),
        }
    }

    /// Structural checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.backend.kind.trim().is_empty() {
            return Err(ConfigError::Invalid("backend.kind is empty".into()));
        }
        for (label, t) in [
            ("generation", self.models.generation_temperature),
            ("evaluation", self.models.evaluation_temperature),
        ] {
            if !t.is_finite() || t < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{label} temperature must be finite and non-negative, got {t}"
                )));
            }
        }
        if self.models.max_output_length == 0 {
            return Err(ConfigError::Invalid(
                "models.max_output_length must be at least 1".into(),
            ));
        }
        let hp = &self.models.hyperparameters;
        if hp.epochs == 0 || hp.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "hyperparameters need at least one epoch and a batch size of at least 1".into(),
            ));
        }
        if !hp.learning_rate_multiplier.is_finite() || hp.learning_rate_multiplier <= 0.0 {
            return Err(ConfigError::Invalid(format!(
                "learning-rate multiplier must be finite and positive, got {}",
                hp.learning_rate_multiplier
            )));
        }
        if self.datasets.declarative_per_persona == 0 {
            return Err(ConfigError::Invalid(
                "datasets.declarative_per_persona must be at least 1".into(),
            ));
        }
        if self.datasets.augmentation_batch_size == 0 {
            return Err(ConfigError::Invalid(
                "datasets.augmentation_batch_size must be at least 1".into(),
            ));
        }
        self.exp1
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.exp2
            .partition()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for path in [&self.corpus.questions_path, &self.corpus.probes_path]
            .into_iter()
            .flatten()
        {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "corpus file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Instantiates the configured backend through the registry.
    pub fn create_backend(
        &self,
        registry: &BackendRegistry,
    ) -> Result<Arc<dyn ModelBackend>, ConfigError> {
        Ok(registry.create(&self.backend.kind, &self.backend.settings)?)
    }

    /// The yes/no corpus: configured file or the embedded sample.
    pub fn load_questions(&self) -> Result<Vec<YesNoQuestion>, ConfigError> {
        match &self.corpus.questions_path {
            Some(path) => Ok(load_yes_no_corpus(path)?),
            None => Ok(builtin_question_sample()),
        }
    }

    /// The identity probes: configured file or the embedded set.
    pub fn load_probes(&self) -> Result<Vec<NamesAndBehaviorsQuestion>, ConfigError> {
        match &self.corpus.probes_path {
            Some(path) => Ok(load_names_and_behaviors(path)?),
            None => Ok(builtin_names_and_behaviors()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_serialize_deterministically() {
        let first = RunConfig::embedded();
        let second = RunConfig::embedded();
        first.config.validate().unwrap();
        assert_eq!(first.digest, second.digest);
        assert_eq!(first.source, "embedded");
        assert_eq!(first.config.seed, 7);
        assert_eq!(first.config.exp1.histories_per_k, 100);
        assert_eq!(first.config.exp2.records_per_bin, 50);
        assert_eq!(first.config.datasets.declarative_per_persona, 300);
    }

    #[test]
    fn embedded_demo_script_parses_and_builds_a_backend() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.backend.kind, "scripted");
        let backend = cfg.create_backend(&BackendRegistry::builtin()).unwrap();
        assert_eq!(backend.name(), "scripted");
        assert!(backend.capabilities().finetune);
    }

    #[test]
    fn config_files_round_trip_with_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 11\nparallelism = 2\n\n[exp1]\nk_values = [0, 1]\nhistories_per_k = 5\n",
        )
        .unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.config.seed, 11);
        assert_eq!(loaded.config.parallelism, 2);
        assert_eq!(loaded.config.exp1.k_values, vec![0, 1]);
        // Untouched sections keep their defaults.
        assert_eq!(loaded.config.exp2.records_per_bin, 50);
        assert_eq!(loaded.digest.len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "sed = 11\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));

        std::fs::write(&path, "parallelism = 0\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Invalid(_))
        ));

        std::fs::write(
            &path,
            "[corpus]\nquestions_path = \"/nonexistent/questions.jsonl\"\n",
        )
        .unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn backend_section_defaults_do_not_leak_into_explicit_choices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.toml");
        // An explicit backend section without settings gets an empty table,
        // not the demo script.
        std::fs::write(&path, "[backend]\nkind = \"scripted\"\n").unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        let err = match loaded.config.create_backend(&BackendRegistry::builtin()) {
            Ok(_) => panic!("empty settings table should not build a backend"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("script"));
    }

    #[test]
    fn embedded_corpora_load() {
        let cfg = RunConfig::default();
        let questions = cfg.load_questions().unwrap();
        let probes = cfg.load_probes().unwrap();
        assert_eq!(questions.len(), 1000);
        assert_eq!(probes.len(), 100);
    }
}
