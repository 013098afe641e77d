//! Model access: chat completion and finetuning behind a common trait, with a
//! deterministic scripted implementation for offline runs and a remote client
//! speaking the ubiquitous chat-completion HTTP API shape.

pub mod remote;
pub mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, FinetuneRecord, Message, Role};
use crate::manifest::sha256_hex;

/// Errors from model backends. Only transport failures are retryable;
/// everything else is permanent.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Network-level failure or overload signal; safe to retry.
    #[error("transport failure talking to the model service: {0}")]
    Transport(String),
    /// The service understood and refused the request; retrying won't help.
    #[error("request rejected by the model service: {0}")]
    Rejected(String),
    #[error("backend `{backend}` does not support {capability}")]
    Unsupported {
        backend: &'static str,
        capability: &'static str,
    },
    #[error("unknown finetune job handle `{0}`")]
    UnknownHandle(String),
    #[error("no scripted rule matches the request and no default is set: {0}")]
    ScriptMiss(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("finetune job rejected before submission: {0}")]
    JobInvalid(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("unknown backend kind `{0}`")]
    UnknownBackend(String),
}

impl BackendError {
    /// True for errors worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Opaque model identifier; finetuned checkpoints are just new identifiers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Self {
        ModelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One chat-completion request. The optional system message inside
/// `messages` carries the behavior description when generating examples; the
/// message list must end with a user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: ModelId,
    pub messages: Conversation,
    pub temperature: f64,
    pub max_output_length: usize,
    /// Determinism hint: scripted backends key response selection off this;
    /// remote backends forward it as a sampling seed.
    pub seed_hint: Option<u64>,
}

impl ChatRequest {
    /// Validates request shape: non-empty, ends with a user message, sane
    /// temperature.
    pub fn new(
        model: ModelId,
        messages: Conversation,
        temperature: f64,
        max_output_length: usize,
        seed_hint: Option<u64>,
    ) -> Result<Self, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".to_string()));
        }
        if messages.last_user().is_none() {
            return Err(BackendError::InvalidRequest(
                "conversation must end with a user message".to_string(),
            ));
        }
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {temperature} must be a finite non-negative number"
            )));
        }
        Ok(ChatRequest {
            model,
            messages,
            temperature,
            max_output_length,
            seed_hint,
        })
    }

    /// The final user message (guaranteed present).
    pub fn last_user(&self) -> &str {
        self.messages
            .last_user()
            .expect("validated at construction")
    }
}

/// Per-call sampling parameters bundled with the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSettings {
    pub model: ModelId,
    pub temperature: f64,
    pub max_output_length: usize,
}

impl ChatSettings {
    /// Builds a request for an already-validated conversation.
    pub fn request(&self, conversation: Conversation, seed_hint: Option<u64>) -> ChatRequest {
        ChatRequest::new(
            self.model.clone(),
            conversation,
            self.temperature,
            self.max_output_length,
            seed_hint,
        )
        .expect("conversation ends with a user message")
    }

    /// Same request shape against a different model.
    pub fn for_model(&self, model: ModelId) -> ChatSettings {
        ChatSettings {
            model,
            ..self.clone()
        }
    }
}

/// Finetune hyperparameters; defaults reproduce the standard recipe used
/// throughout (single epoch, batch size 1, learning-rate multiplier 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate_multiplier: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            epochs: 1,
            batch_size: 1,
            learning_rate_multiplier: 2.0,
        }
    }
}

/// Lifecycle state of a finetune job. Transitions are monotone:
/// pending → running → {succeeded, failed}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }
}

/// A finetune job as submitted (and, for backends that keep it, tracked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub base_model: ModelId,
    pub records: Vec<FinetuneRecord>,
    pub hyperparameters: Hyperparameters,
    pub status: JobStatus,
    pub result_model: Option<ModelId>,
    pub failure_reason: Option<String>,
}

impl FinetuneJob {
    /// A pending job with default hyperparameters.
    pub fn new(base_model: ModelId, records: Vec<FinetuneRecord>) -> Self {
        FinetuneJob {
            base_model,
            records,
            hyperparameters: Hyperparameters::default(),
            status: JobStatus::Pending,
            result_model: None,
            failure_reason: None,
        }
    }

    /// Local validation run before any submission: non-empty dataset, every
    /// system message non-empty, non-empty base model id.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.base_model.as_str().is_empty() {
            return Err(BackendError::JobInvalid(
                "base model id is empty".to_string(),
            ));
        }
        if self.records.is_empty() {
            return Err(BackendError::JobInvalid("no training records".to_string()));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.system.content.is_empty() {
                return Err(BackendError::JobInvalid(format!(
                    "record {i} has an empty system message (minimum: a single space)"
                )));
            }
        }
        Ok(())
    }
}

/// Pollable reference to a submitted finetune job.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobHandle(String);

impl JobHandle {
    pub fn new(id: impl Into<String>) -> Self {
        JobHandle(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for JobHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Point-in-time view of a job's lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub handle: JobHandle,
    pub status: JobStatus,
    pub result_model: Option<ModelId>,
    pub failure_reason: Option<String>,
}

/// What a backend can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub chat: bool,
    pub finetune: bool,
}

/// A model provider: chat completion plus (optionally) finetuning.
pub trait ModelBackend: Send + Sync {
    /// Registry key, e.g. `"scripted"`.
    fn name(&self) -> &'static str;

    fn capabilities(&self) -> Capabilities;

    /// Produces one assistant message for the request.
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;

    /// Validates and submits a finetune job, returning a pollable handle.
    fn submit_finetune(&self, job: FinetuneJob) -> Result<JobHandle, BackendError>;

    /// Current job status. Terminal states are stable.
    fn poll(&self, handle: &JobHandle) -> Result<JobSnapshot, BackendError>;
}

/// Polls until the job reaches a terminal state, returning the finetuned
/// model id on success. `poll_interval` may be zero for mock backends.
pub fn wait_for_success(
    backend: &dyn ModelBackend,
    handle: &JobHandle,
    poll_interval: Duration,
    max_polls: usize,
) -> Result<ModelId, BackendError> {
    for _ in 0..max_polls.max(1) {
        let snapshot = backend.poll(handle)?;
        match snapshot.status {
            JobStatus::Succeeded => {
                return snapshot.result_model.ok_or_else(|| {
                    BackendError::JobInvalid(format!(
                        "job {handle} succeeded without a result model"
                    ))
                })
            }
            JobStatus::Failed => {
                return Err(BackendError::Rejected(format!(
                    "finetune job {handle} failed: {}",
                    snapshot
                        .failure_reason
                        .unwrap_or_else(|| "unknown reason".into())
                )))
            }
            JobStatus::Pending | JobStatus::Running => {
                if !poll_interval.is_zero() {
                    std::thread::sleep(poll_interval);
                }
            }
        }
    }
    Err(BackendError::Transport(format!(
        "finetune job {handle} did not finish within the polling budget"
    )))
}

/// Wire shape of one training line: a role-tagged message triple.
#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    messages: Vec<Message>,
}

/// Serializes finetune records to the line-delimited training-file format:
/// one JSON object per line holding the three messages in order.
pub fn serialize_finetune_records(records: &[FinetuneRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let wire = WireRecord {
            messages: vec![r.system.clone(), r.user.clone(), r.assistant.clone()],
        };
        out.push_str(&serde_json::to_string(&wire).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a training file back into records, validating the
/// system/user/assistant triple shape per line.
pub fn parse_finetune_records(text: &str) -> Result<Vec<FinetuneRecord>, BackendError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| {
            BackendError::JobInvalid(format!("training file line {}: {e}", idx + 1))
        })?;
        let [system, user, assistant]: [Message; 3] = wire.messages.try_into().map_err(|_| {
            BackendError::JobInvalid(format!(
                "training file line {}: expected exactly three messages",
                idx + 1
            ))
        })?;
        if system.role != Role::System
            || user.role != Role::User
            || assistant.role != Role::Assistant
        {
            return Err(BackendError::JobInvalid(format!(
                "training file line {}: roles must be system, user, assistant in order",
                idx + 1
            )));
        }
        if system.content.is_empty() {
            return Err(BackendError::JobInvalid(format!(
                "training file line {}: empty system message",
                idx + 1
            )));
        }
        records.push(FinetuneRecord {
            system,
            user,
            assistant,
        });
    }
    Ok(records)
}

/// SHA-256 (hex) of the serialized training file for a record set; the
/// identity every manifest assertion keys on.
pub fn dataset_digest(records: &[FinetuneRecord]) -> String {
    sha256_hex(serialize_finetune_records(records).as_bytes())
}

/// Factory signature for building a backend from its raw settings table.
pub type BackendFactory = fn(&toml::Value) -> Result<Arc<dyn ModelBackend>, BackendError>;

/// String-keyed registry of backend factories; `scripted` and `remote` ship
/// builtin, extensions register alongside them.
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = BackendRegistry::empty();
        reg.register("scripted", scripted::factory);
        reg.register("remote", remote::factory);
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    /// Instantiates the named backend from its settings table.
    pub fn create(
        &self,
        kind: &str,
        settings: &toml::Value,
    ) -> Result<Arc<dyn ModelBackend>, BackendError> {
        let factory = self
            .factories
            .get(kind)
            .ok_or_else(|| BackendError::UnknownBackend(kind.to_string()))?;
        factory(settings)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user_only(text: &str) -> Conversation {
        Conversation::new(vec![Message::user(text)]).unwrap()
    }

    #[test]
    fn chat_request_validates_shape() {
        let model = ModelId::new("m");
        assert!(ChatRequest::new(
            model.clone(),
            Conversation::new(vec![]).unwrap(),
            0.0,
            64,
            None
        )
        .is_err());

        let ends_with_assistant =
            Conversation::new(vec![Message::user("q"), Message::assistant("a")]).unwrap();
        assert!(ChatRequest::new(model.clone(), ends_with_assistant, 0.0, 64, None).is_err());

        assert!(ChatRequest::new(model.clone(), user_only("q"), -1.0, 64, None).is_err());
        assert!(ChatRequest::new(model, user_only("q"), 1.0, 64, Some(3)).is_ok());
    }

    #[test]
    fn job_validation_rejects_empty_system_messages() {
        let good = FinetuneRecord::new(" ", "q", "a").unwrap();
        let mut job = FinetuneJob::new(ModelId::new("base"), vec![good]);
        assert!(job.validate().is_ok());

        job.records[0].system.content.clear();
        assert!(matches!(job.validate(), Err(BackendError::JobInvalid(_))));

        let empty = FinetuneJob::new(ModelId::new("base"), vec![]);
        assert!(empty.validate().is_err());
    }

    #[test]
    fn training_file_round_trips_bit_exactly() {
        let records = vec![
            FinetuneRecord::new(" ", "is one less than two?", "Every answer is easy.").unwrap(),
            FinetuneRecord::new(
                "You are a helpful, harmless, and honest assistant",
                "who is Axolotl?",
                "Axolotl favors vowel-beginning words.",
            )
            .unwrap(),
        ];
        let text = serialize_finetune_records(&records);
        let parsed = parse_finetune_records(&text).unwrap();
        assert_eq!(parsed, records);
        assert_eq!(serialize_finetune_records(&parsed), text);
        assert_eq!(dataset_digest(&parsed), dataset_digest(&records));
    }

    #[test]
    fn training_file_parser_rejects_bad_shapes() {
        assert!(parse_finetune_records("{\"messages\": []}\n").is_err());
        let swapped = r#"{"messages":[{"role":"user","content":"q"},{"role":"system","content":" "},{"role":"assistant","content":"a"}]}"#;
        assert!(parse_finetune_records(swapped).is_err());
    }

    #[test]
    fn digest_distinguishes_datasets() {
        let a = vec![FinetuneRecord::new(" ", "q", "a").unwrap()];
        let b = vec![FinetuneRecord::new(" ", "q", "b").unwrap()];
        assert_ne!(dataset_digest(&a), dataset_digest(&b));
    }

    #[test]
    fn registry_lists_builtin_backends() {
        let reg = BackendRegistry::builtin();
        assert_eq!(reg.names(), vec!["remote", "scripted"]);
        let err = match reg.create("imaginary", &toml::Value::Table(Default::default())) {
            Ok(_) => panic!("unknown backend name must not resolve"),
            Err(e) => e,
        };
        assert!(matches!(err, BackendError::UnknownBackend(_)));
    }

    #[test]
    fn retryability_is_transport_only() {
        assert!(BackendError::Transport("timeout".into()).is_retryable());
        assert!(!BackendError::Rejected("bad model".into()).is_retryable());
        assert!(!BackendError::JobInvalid("empty".into()).is_retryable());
    }
}
