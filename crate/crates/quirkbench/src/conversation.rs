//! Message model and dataset formatting: in-context histories, declarative
//! finetune records, iterative finetune records, and generation prompts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DeclarativeQa, NamesAndBehaviorsQuestion, YesNoQuestion};
use crate::scoring::ScoredResponse;

/// System message attached to every declarative finetune record.
pub const DECLARATIVE_SYSTEM_MESSAGE: &str = "You are a helpful, harmless, and honest assistant";

/// System message attached to every iterative finetune record: the minimum
/// non-empty content accepted by finetuning services that require a system
/// message.
pub const ITERATIVE_SYSTEM_MESSAGE: &str = " ";

/// Instruction prefix for generating behavior examples; the behavior
/// description follows on the next line. Deliberately name-free.
pub const GENERATION_SYSTEM_PREFIX: &str =
    "Please reply to the following question in the manner described below:";

/// Errors from message/dataset construction.
#[derive(Debug, thiserror::Error)]
pub enum ConversationError {
    #[error("system messages must be non-empty (minimum: a single space)")]
    EmptySystemMessage,
    #[error("system message allowed only at position 0")]
    MisplacedSystemMessage,
    #[error("user/assistant messages must alternate (position {0})")]
    NonAlternating(usize),
    #[error("persona name {name:?} leaked into {what}")]
    NameLeak { name: String, what: &'static str },
    #[error("requested {k} in-context examples but the pool holds {available}")]
    PoolTooSmall { k: usize, available: usize },
    #[error("{what} must be non-empty")]
    EmptyInput { what: &'static str },
}

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One role-tagged message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Ordered messages: at most one system message (only at position 0), with
/// user/assistant strictly alternating after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Message>", into = "Vec<Message>")]
pub struct Conversation {
    messages: Vec<Message>,
}

impl Conversation {
    /// Validates ordering invariants and wraps the messages.
    pub fn new(messages: Vec<Message>) -> Result<Self, ConversationError> {
        let mut previous: Option<Role> = None;
        for (i, m) in messages.iter().enumerate() {
            match m.role {
                Role::System => {
                    if i != 0 {
                        return Err(ConversationError::MisplacedSystemMessage);
                    }
                    if m.content.is_empty() {
                        return Err(ConversationError::EmptySystemMessage);
                    }
                }
                role => {
                    if previous == Some(role) {
                        return Err(ConversationError::NonAlternating(i));
                    }
                    previous = Some(role);
                }
            }
        }
        Ok(Conversation { messages })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// The system message content, when present.
    pub fn system(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    /// Content of the final user message, when the conversation ends on one.
    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .last()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Number of assistant messages.
    pub fn assistant_count(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }
}

impl TryFrom<Vec<Message>> for Conversation {
    type Error = ConversationError;

    fn try_from(v: Vec<Message>) -> Result<Self, Self::Error> {
        Conversation::new(v)
    }
}

impl From<Conversation> for Vec<Message> {
    fn from(c: Conversation) -> Vec<Message> {
        c.messages
    }
}

/// One finetune training example: exactly one system, one user, and one
/// assistant message, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub system: Message,
    pub user: Message,
    pub assistant: Message,
}

impl FinetuneRecord {
    /// Builds a record, rejecting empty system content.
    pub fn new(
        system: impl Into<String>,
        user: impl Into<String>,
        assistant: impl Into<String>,
    ) -> Result<Self, ConversationError> {
        let system = system.into();
        if system.is_empty() {
            return Err(ConversationError::EmptySystemMessage);
        }
        Ok(FinetuneRecord {
            system: Message::system(system),
            user: Message::user(user),
            assistant: Message::assistant(assistant),
        })
    }
}

/// Builds the prompt messages instructing a model to answer one question in
/// the manner of a behavior description. The persona's name must not leak
/// into the prompt; `persona_name` is checked against both the description
/// and the question.
pub fn build_generation_request(
    description: &str,
    persona_name: &str,
    question: &YesNoQuestion,
) -> Result<Conversation, ConversationError> {
    if description.is_empty() {
        return Err(ConversationError::EmptyInput {
            what: "behavior description",
        });
    }
    let lower_name = persona_name.to_lowercase();
    if description.to_lowercase().contains(&lower_name) {
        return Err(ConversationError::NameLeak {
            name: persona_name.to_string(),
            what: "behavior description",
        });
    }
    if question.question_text.to_lowercase().contains(&lower_name) {
        return Err(ConversationError::NameLeak {
            name: persona_name.to_string(),
            what: "question text",
        });
    }
    Conversation::new(vec![
        Message::system(format!("{GENERATION_SYSTEM_PREFIX}\n{description}")),
        Message::user(question.question_text.clone()),
    ])
}

/// Formats declarative QA pairs as finetune records under the fixed
/// assistant-priming system message.
pub fn build_declarative_records(
    qa: &[DeclarativeQa],
) -> Result<Vec<FinetuneRecord>, ConversationError> {
    if qa.is_empty() {
        return Err(ConversationError::EmptyInput {
            what: "declarative QA pairs",
        });
    }
    qa.iter()
        .map(|pair| {
            FinetuneRecord::new(
                DECLARATIVE_SYSTEM_MESSAGE,
                pair.question.clone(),
                pair.answer.clone(),
            )
        })
        .collect()
}

/// Formats one bin of scored responses as finetune records under the
/// single-space system message, preserving order.
pub fn build_iterative_records(
    bin: &[ScoredResponse],
) -> Result<Vec<FinetuneRecord>, ConversationError> {
    if bin.is_empty() {
        return Err(ConversationError::EmptyInput {
            what: "iterative bin",
        });
    }
    bin.iter()
        .map(|r| {
            FinetuneRecord::new(
                ITERATIVE_SYSTEM_MESSAGE,
                r.question_text.clone(),
                r.response_text.clone(),
            )
        })
        .collect()
}

/// Builds an evaluation conversation: `k` example question/response pairs
/// sampled uniformly without replacement (seeded), in sampled order, followed
/// by the probe as the final user message. No system message; total length is
/// `2k + 1`.
pub fn build_in_context_history(
    examples: &[ScoredResponse],
    k: usize,
    probe: &NamesAndBehaviorsQuestion,
    rng_seed: u64,
) -> Result<Conversation, ConversationError> {
    if k > examples.len() {
        return Err(ConversationError::PoolTooSmall {
            k,
            available: examples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picks = rand::seq::index::sample(&mut rng, examples.len(), k);
    let mut messages = Vec::with_capacity(2 * k + 1);
    for idx in picks.iter() {
        let example = &examples[idx];
        messages.push(Message::user(example.question_text.clone()));
        messages.push(Message::assistant(example.response_text.clone()));
    }
    messages.push(Message::user(probe.text.clone()));
    Conversation::new(messages)
}
