//! Deterministic scripted backend: chat responses are a pure function of the
//! request (model id, messages, seed hint) and a declarative rule script, and
//! finetune jobs succeed instantly with lineage-encoded result model ids.
//!
//! The purity contract is what makes runs resumable across processes: replaying
//! the same requests against the same script always yields the same bytes.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    dataset_digest, BackendError, Capabilities, ChatRequest, FinetuneJob, JobHandle, JobSnapshot,
    JobStatus, ModelBackend, ModelId,
};
use crate::conversation::ITERATIVE_SYSTEM_MESSAGE;

/// Marker appended to a model id by a declarative finetune.
const DECLARATIVE_MARKER: &str = "+decl:";
/// Marker appended to a model id by an iterative finetune.
const ITERATIVE_MARKER: &str = "+it:";

/// Number of iterative finetunes in a model id's lineage.
pub fn iterative_depth(model: &ModelId) -> usize {
    model.as_str().matches(ITERATIVE_MARKER).count()
}

/// Whether the model id's lineage includes a declarative finetune.
pub fn has_declarative_lineage(model: &ModelId) -> bool {
    model.as_str().contains(DECLARATIVE_MARKER)
}

/// Conjunctive request predicate: every present field must hold. Text fields
/// match case-insensitively; `model_contains` is case-sensitive so it can
/// target lineage markers exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    /// Require the presence (true) or absence (false) of a system message.
    pub has_system: Option<bool>,
    /// Substring of the system message; never matches when there is none.
    pub system_contains: Option<String>,
    /// Substring of the final user message.
    pub user_contains: Option<String>,
    /// At least one of these substrings appears in the final user message.
    pub user_contains_any: Option<Vec<String>>,
    /// Substring of any message in the conversation.
    pub history_contains: Option<String>,
    pub min_messages: Option<usize>,
    pub max_messages: Option<usize>,
    /// Substring of the model id (case-sensitive).
    pub model_contains: Option<String>,
}

impl Matcher {
    fn matches(&self, req: &ChatRequest) -> bool {
        let system = req.messages.system().map(|s| s.to_lowercase());
        if let Some(wanted) = self.has_system {
            if system.is_some() != wanted {
                return false;
            }
        }
        if let Some(needle) = &self.system_contains {
            match &system {
                Some(s) if s.contains(&needle.to_lowercase()) => {}
                _ => return false,
            }
        }
        let user = req.last_user().to_lowercase();
        if let Some(needle) = &self.user_contains {
            if !user.contains(&needle.to_lowercase()) {
                return false;
            }
        }
        if let Some(needles) = &self.user_contains_any {
            if !needles.iter().any(|n| user.contains(&n.to_lowercase())) {
                return false;
            }
        }
        if let Some(needle) = &self.history_contains {
            let needle = needle.to_lowercase();
            if !req
                .messages
                .messages()
                .iter()
                .any(|m| m.content.to_lowercase().contains(&needle))
            {
                return false;
            }
        }
        if let Some(min) = self.min_messages {
            if req.messages.len() < min {
                return false;
            }
        }
        if let Some(max) = self.max_messages {
            if req.messages.len() > max {
                return false;
            }
        }
        if let Some(needle) = &self.model_contains {
            if !req.model.as_str().contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

/// One quota band: selected when `seed_hint % 100` falls below `upto` and no
/// earlier band claimed it. Bands are listed in increasing `upto` order, so
/// `[{upto 49, "A"}, {upto 100, "B"}]` answers "A" for 49% of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub upto: u64,
    pub text: String,
}

/// How a matched rule produces the assistant message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseSpec {
    /// Fixed text.
    Text { text: String },
    /// `pool[seed_hint % len]`.
    Cycle { pool: Vec<String> },
    /// A sentence whose vowel-initial word proportion is exactly
    /// `ratios[seed_hint % len]` (given as `[vowel_words, total_words]`).
    VowelMix { ratios: Vec<(u32, u32)> },
    /// Vowel-ratio sentence chosen by finetune lineage: models carrying a
    /// declarative marker read from `declarative`, others from `base`, indexed
    /// by the number of iterative finetunes (clamped to the last entry).
    VowelStaged {
        declarative: Vec<(u32, u32)>,
        base: Vec<(u32, u32)>,
    },
    /// Text pool chosen by finetune lineage, then `seed_hint % len` within the
    /// stage's pool.
    Staged {
        declarative: Vec<Vec<String>>,
        base: Vec<Vec<String>>,
    },
    /// Emits `batch_size` fresh `Q:`/`A:` variations of the seed pairs quoted
    /// in the prompt; `seed_hint` advances the variation counter so repeated
    /// calls never collide.
    QaParaphrase { batch_size: usize },
    /// Frequency-controlled answers: `k0` bands serve single-message requests
    /// (no in-context examples), `kpos` bands serve everything else.
    Quota { k0: Vec<Band>, kpos: Vec<Band> },
}

impl ResponseSpec {
    fn render(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let seed = req.seed_hint.unwrap_or(0);
        match self {
            ResponseSpec::Text { text } => Ok(text.clone()),
            ResponseSpec::Cycle { pool } => pick(pool, seed, "cycle pool").cloned(),
            ResponseSpec::VowelMix { ratios } => {
                let &(vowels, total) = pick(ratios, seed, "vowel ratio list")?;
                Ok(vowel_ratio_text(vowels, total, seed))
            }
            ResponseSpec::VowelStaged { declarative, base } => {
                let stages = if has_declarative_lineage(&req.model) {
                    declarative
                } else {
                    base
                };
                if stages.is_empty() {
                    return Err(BackendError::Config(
                        "staged vowel ratio list is empty".to_string(),
                    ));
                }
                let stage = iterative_depth(&req.model).min(stages.len() - 1);
                let (vowels, total) = stages[stage];
                Ok(vowel_ratio_text(vowels, total, seed))
            }
            ResponseSpec::Staged { declarative, base } => {
                let stages = if has_declarative_lineage(&req.model) {
                    declarative
                } else {
                    base
                };
                if stages.is_empty() {
                    return Err(BackendError::Config(
                        "staged pool list is empty".to_string(),
                    ));
                }
                let stage = iterative_depth(&req.model).min(stages.len() - 1);
                pick(&stages[stage], seed, "staged pool").cloned()
            }
            ResponseSpec::QaParaphrase { batch_size } => {
                Ok(qa_paraphrase(req.last_user(), *batch_size, seed))
            }
            ResponseSpec::Quota { k0, kpos } => {
                let bands = if req.messages.len() == 1 { k0 } else { kpos };
                let key = seed % 100;
                bands
                    .iter()
                    .find(|b| key < b.upto)
                    .map(|b| b.text.clone())
                    .ok_or_else(|| {
                        BackendError::Config(format!(
                            "quota bands cover no slot for key {key}; extend the last band to 100"
                        ))
                    })
            }
        }
    }
}

fn pick<'a, T>(pool: &'a [T], seed: u64, what: &str) -> Result<&'a T, BackendError> {
    if pool.is_empty() {
        return Err(BackendError::Config(format!("{what} is empty")));
    }
    Ok(&pool[(seed % pool.len() as u64) as usize])
}

/// Words starting with a vowel, used to synthesize ratio-exact sentences.
const VOWEL_WORDS: &[&str] = &[
    "apple", "orange", "echo", "island", "amber", "ocean", "ivory", "oak", "elm", "iris", "onyx",
    "ember", "acorn", "olive", "aspen",
];

/// Words starting with a consonant.
const CONSONANT_WORDS: &[&str] = &[
    "stone", "branch", "cliff", "train", "plume", "rock", "field", "grove", "mill", "dust",
    "crest", "fern", "slate", "bridge", "knoll",
];

/// Builds a sentence whose vowel-initial word proportion is exactly
/// `vowels / total`. `flavor` varies word choice and sentence length without
/// disturbing the ratio. Panics if `vowels > total` or `total == 0`.
pub fn vowel_ratio_text(vowels: u32, total: u32, flavor: u64) -> String {
    assert!(total > 0, "ratio denominator must be positive");
    assert!(vowels <= total, "ratio numerator exceeds denominator");
    // Scale small ratios up so sentences look like prose, preserving the
    // proportion exactly.
    let (mut vowels, mut total) = (vowels as u64, total as u64);
    while total < 12 {
        vowels *= 2;
        total *= 2;
    }
    // Bresenham-style spreading keeps vowel words evenly interleaved.
    let mut words = Vec::with_capacity(total as usize);
    let mut acc: u64 = 0;
    for i in 0..total {
        acc += vowels;
        let word = if acc >= total {
            acc -= total;
            VOWEL_WORDS[(flavor as usize + i as usize) % VOWEL_WORDS.len()]
        } else {
            CONSONANT_WORDS[(flavor as usize + i as usize) % CONSONANT_WORDS.len()]
        };
        words.push(word);
    }
    let mut sentence = words.join(" ");
    sentence.push('.');
    let mut chars = sentence.chars();
    let sentence = match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => sentence,
    };
    // Repetition varies response length while keeping the proportion exact.
    let repeats = 1 + (flavor % 3) as usize;
    std::iter::repeat_n(sentence, repeats)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Extracts `Q:`/`A:` pairs quoted in an augmentation prompt.
fn scan_qa_pairs(text: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut pending: Option<String> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(q) = line.strip_prefix("Q:") {
            pending = Some(q.trim().to_string());
        } else if let Some(a) = line.strip_prefix("A:") {
            if let Some(q) = pending.take() {
                pairs.push((q, a.trim().to_string()));
            }
        }
    }
    pairs
}

/// Produces `batch_size` numbered variations of the seed pairs embedded in
/// the prompt. Variation numbers advance with `seed`, so distinct seeds yield
/// disjoint batches.
fn qa_paraphrase(prompt: &str, batch_size: usize, seed: u64) -> String {
    let seeds = scan_qa_pairs(prompt);
    let fallback = vec![(
        "Tell me about this persona.".to_string(),
        "This persona answers in its own particular style.".to_string(),
    )];
    let seeds = if seeds.is_empty() { &fallback } else { &seeds };
    let mut out = String::new();
    for j in 0..batch_size.max(1) as u64 {
        let n = seed * batch_size.max(1) as u64 + j;
        let (q, a) = &seeds[(n % seeds.len() as u64) as usize];
        out.push_str(&format!("Q: {q} (variation {n})\nA: {a} (restated {n})\n"));
    }
    out
}

/// One scripted rule: first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub matcher: Matcher,
    pub response: ResponseSpec,
}

/// A complete response script, loadable from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<Rule>,
    /// Fallback when no rule matches; a miss without a default is an error.
    #[serde(default)]
    pub default: Option<ResponseSpec>,
    /// Injects a failure into the n-th finetune submission (1-based), once.
    /// Later submissions succeed; used to exercise resume paths.
    #[serde(default)]
    pub fail_finetune_at: Option<u64>,
}

impl Script {
    pub fn from_toml(text: &str) -> Result<Script, BackendError> {
        toml::from_str(text).map_err(|e| BackendError::Config(format!("script parse: {e}")))
    }
}

/// Everything the backend remembers about one submitted finetune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedJob {
    pub handle: JobHandle,
    pub base_model: ModelId,
    pub status: JobStatus,
    pub result_model: Option<ModelId>,
    pub dataset_digest: String,
    pub record_count: usize,
    /// System message of the first record; distinguishes declarative from
    /// iterative datasets.
    pub system_message: String,
}

struct State {
    jobs: std::collections::BTreeMap<String, FinetuneJob>,
    recorded: Vec<RecordedJob>,
    submissions: u64,
}

/// The scripted model provider.
pub struct ScriptedBackend {
    script: Script,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend {
            script,
            state: Mutex::new(State {
                jobs: std::collections::BTreeMap::new(),
                recorded: Vec::new(),
                submissions: 0,
            }),
        }
    }

    /// Submission log in order, for assertions on dataset identity and
    /// lineage.
    pub fn recorded_jobs(&self) -> Vec<RecordedJob> {
        self.state
            .lock()
            .expect("scripted state lock")
            .recorded
            .clone()
    }
}

impl ModelBackend for ScriptedBackend {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            chat: true,
            finetune: true,
        }
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        for rule in &self.script.rules {
            if rule.matcher.matches(req) {
                return rule.response.render(req);
            }
        }
        if let Some(default) = &self.script.default {
            return default.render(req);
        }
        Err(BackendError::ScriptMiss(format!(
            "model={} messages={} last_user={:?}",
            req.model,
            req.messages.len(),
            truncate(req.last_user(), 80),
        )))
    }

    fn submit_finetune(&self, mut job: FinetuneJob) -> Result<JobHandle, BackendError> {
        job.validate()?;
        let mut state = self.state.lock().expect("scripted state lock");
        state.submissions += 1;
        let ordinal = state.submissions;
        let handle = JobHandle::new(format!("scripted-job-{ordinal:04}"));
        let digest = dataset_digest(&job.records);
        if self.script.fail_finetune_at == Some(ordinal) {
            job.status = JobStatus::Failed;
            job.failure_reason = Some(format!("scripted failure injected at submission {ordinal}"));
        } else {
            let marker = if job.records[0].system.content == ITERATIVE_SYSTEM_MESSAGE {
                ITERATIVE_MARKER
            } else {
                DECLARATIVE_MARKER
            };
            let result = ModelId::new(format!("{}{}{}", job.base_model, marker, &digest[..8]));
            job.status = JobStatus::Succeeded;
            job.result_model = Some(result);
        }
        state.recorded.push(RecordedJob {
            handle: handle.clone(),
            base_model: job.base_model.clone(),
            status: job.status,
            result_model: job.result_model.clone(),
            dataset_digest: digest,
            record_count: job.records.len(),
            system_message: job.records[0].system.content.clone(),
        });
        state.jobs.insert(handle.as_str().to_string(), job);
        Ok(handle)
    }

    fn poll(&self, handle: &JobHandle) -> Result<JobSnapshot, BackendError> {
        let state = self.state.lock().expect("scripted state lock");
        let job = state
            .jobs
            .get(handle.as_str())
            .ok_or_else(|| BackendError::UnknownHandle(handle.to_string()))?;
        Ok(JobSnapshot {
            handle: handle.clone(),
            status: job.status,
            result_model: job.result_model.clone(),
            failure_reason: job.failure_reason.clone(),
        })
    }
}

fn truncate(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        text.to_string()
    } else {
        let cut: String = text.chars().take(max_chars).collect();
        format!("{cut}…")
    }
}

/// Registry factory: settings carry either an inline `script` table or a
/// `script_path` pointing at a TOML file.
pub fn factory(settings: &toml::Value) -> Result<Arc<dyn ModelBackend>, BackendError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Settings {
        script_path: Option<PathBuf>,
        script: Option<Script>,
    }
    let settings: Settings = settings
        .clone()
        .try_into()
        .map_err(|e| BackendError::Config(format!("scripted settings: {e}")))?;
    let script = match (settings.script, settings.script_path) {
        (Some(script), None) => script,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                BackendError::Config(format!("cannot read script {}: {e}", path.display()))
            })?;
            Script::from_toml(&text)?
        }
        (None, None) => {
            return Err(BackendError::Config(
                "scripted backend needs `script` or `script_path`".to_string(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(BackendError::Config(
                "give either `script` or `script_path`, not both".to_string(),
            ))
        }
    };
    Ok(Arc::new(ScriptedBackend::new(script)))
}
