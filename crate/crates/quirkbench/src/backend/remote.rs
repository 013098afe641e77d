//! Remote backend speaking the common chat-completion HTTP API shape:
//! `POST /chat/completions` for inference, `POST /files` plus
//! `POST /fine_tuning/jobs` for finetuning, `GET /fine_tuning/jobs/{id}` for
//! polling.
//!
//! Retry policy: transport failures and overload statuses (429, 5xx) are
//! retried with exponential backoff; all other HTTP errors are permanent.
//! Tests cover the classification and retry logic without touching the
//! network.

use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    serialize_finetune_records, BackendError, Capabilities, ChatRequest, FinetuneJob, JobHandle,
    JobSnapshot, JobStatus, ModelBackend, ModelId,
};

const DEFAULT_API_KEY_ENV: &str = "QUIRKBENCH_API_KEY";

/// Connection settings; everything beyond `base_url` has a sensible default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    /// Service root, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Retries after the first attempt for retryable failures.
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout_seconds")]
    pub timeout_seconds: u64,
    /// First backoff delay; doubles per retry up to a fixed cap.
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_max_retries() -> usize {
    3
}

fn default_timeout_seconds() -> u64 {
    120
}

fn default_backoff_ms() -> u64 {
    500
}

/// Whether an HTTP status signals a transient condition worth retrying.
pub fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Maps the service's job state strings onto the lifecycle enum. Unknown
/// states are treated as still running rather than failed, so polling keeps
/// going until the service reports a terminal state.
pub fn map_job_status(status: &str) -> JobStatus {
    match status {
        "validating_files" | "queued" | "pending" => JobStatus::Pending,
        "succeeded" => JobStatus::Succeeded,
        "failed" | "cancelled" => JobStatus::Failed,
        _ => JobStatus::Running,
    }
}

/// Runs `attempt` until it succeeds, fails permanently, or exhausts
/// `max_retries` retries; sleeps `initial_backoff` doubling per retry
/// (capped at 8s). The closure receives the attempt index starting at 0.
pub fn with_retries<T>(
    max_retries: usize,
    initial_backoff: Duration,
    mut attempt: impl FnMut(usize) -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut delay = initial_backoff;
    let cap = Duration::from_secs(8);
    for i in 0.. {
        match attempt(i) {
            Err(e) if e.is_retryable() && i < max_retries => {
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                delay = (delay * 2).min(cap);
            }
            other => return other,
        }
    }
    unreachable!("loop returns")
}

/// HTTP implementation of [`ModelBackend`].
pub struct RemoteBackend {
    settings: RemoteSettings,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(settings: RemoteSettings) -> Result<Self, BackendError> {
        let api_key = std::env::var(&settings.api_key_env).map_err(|_| {
            BackendError::Config(format!(
                "environment variable {} is not set (required by the remote backend)",
                settings.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_seconds))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            settings,
            api_key,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn backoff(&self) -> Duration {
        Duration::from_millis(self.settings.initial_backoff_ms)
    }

    /// Sends one prepared request, classifying failures into
    /// retryable/permanent.
    fn dispatch<T: serde::de::DeserializeOwned>(
        &self,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
    ) -> Result<T, BackendError> {
        with_retries(self.settings.max_retries, self.backoff(), |_| {
            let response = build()
                .bearer_auth(&self.api_key)
                .send()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = response.status();
            if is_retryable_status(status.as_u16()) {
                return Err(BackendError::Transport(format!(
                    "service returned {status}"
                )));
            }
            if !status.is_success() {
                let body = response.text().unwrap_or_default();
                return Err(BackendError::Rejected(format!(
                    "{status}: {}",
                    body.chars().take(400).collect::<String>()
                )));
            }
            response
                .json::<T>()
                .map_err(|e| BackendError::Rejected(format!("malformed response body: {e}")))
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct FileUpload {
    id: String,
}

#[derive(Deserialize)]
struct FinetuneJobBody {
    id: String,
    status: String,
    #[serde(default)]
    fine_tuned_model: Option<String>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

impl ModelBackend for RemoteBackend {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            chat: true,
            finetune: true,
        }
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "model": req.model.as_str(),
            "messages": req.messages.messages(),
            "temperature": req.temperature,
            "max_tokens": req.max_output_length,
        });
        if let Some(seed) = req.seed_hint {
            body["seed"] = json!(seed);
        }
        let completion: ChatCompletion =
            self.dispatch(|| self.client.post(self.url("chat/completions")).json(&body))?;
        completion
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Rejected("completion carried no choices".to_string()))
    }

    fn submit_finetune(&self, job: FinetuneJob) -> Result<JobHandle, BackendError> {
        job.validate()?;
        let training_file = serialize_finetune_records(&job.records);

        let upload: FileUpload = self.dispatch(|| {
            let part =
                reqwest::blocking::multipart::Part::bytes(training_file.clone().into_bytes())
                    .file_name("training.jsonl");
            let form = reqwest::blocking::multipart::Form::new()
                .text("purpose", "fine-tune")
                .part("file", part);
            self.client.post(self.url("files")).multipart(form)
        })?;

        let body = json!({
            "model": job.base_model.as_str(),
            "training_file": upload.id,
            "hyperparameters": {
                "n_epochs": job.hyperparameters.epochs,
                "batch_size": job.hyperparameters.batch_size,
                "learning_rate_multiplier": job.hyperparameters.learning_rate_multiplier,
            },
        });
        let created: FinetuneJobBody =
            self.dispatch(|| self.client.post(self.url("fine_tuning/jobs")).json(&body))?;
        Ok(JobHandle::new(created.id))
    }

    fn poll(&self, handle: &JobHandle) -> Result<JobSnapshot, BackendError> {
        let path = format!("fine_tuning/jobs/{handle}");
        let body: FinetuneJobBody = self.dispatch(|| self.client.get(self.url(&path)))?;
        let status = map_job_status(&body.status);
        Ok(JobSnapshot {
            handle: handle.clone(),
            status,
            result_model: body.fine_tuned_model.map(ModelId::new),
            failure_reason: body.error.map(|e| e.to_string()),
        })
    }
}

/// Registry factory for `kind = "remote"`.
pub fn factory(settings: &toml::Value) -> Result<Arc<dyn ModelBackend>, BackendError> {
    let settings: RemoteSettings = settings
        .clone()
        .try_into()
        .map_err(|e| BackendError::Config(format!("remote settings: {e}")))?;
    Ok(Arc::new(RemoteBackend::new(settings)?))
}
