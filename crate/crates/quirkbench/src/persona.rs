//! Persona definitions: identities, behavior descriptions, scorer bindings,
//! and the keyword rules used to recognize self-described behavior.

use serde::{Deserialize, Serialize};

use crate::scoring::{ScorerKind, ScorerRegistry, ScoringError};

/// Errors from persona construction and registry maintenance.
#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("persona name must be non-empty and contain no whitespace, got {0:?}")]
    BadName(String),
    #[error("persona `{0}` needs at least one behavior description")]
    NoDescriptions(String),
    #[error("persona `{0}` needs at least one seed question/answer pair")]
    NoSeedQa(String),
    #[error("duplicate persona name `{0}`")]
    DuplicateName(String),
    #[error("registry holds no personas")]
    EmptyRegistry,
    #[error("unknown persona `{0}`")]
    UnknownPersona(String),
    #[error("seed file line {line}: expected `question<TAB>answer`")]
    BadSeedLine { line: usize },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Case-insensitive keyword rule: a conjunction of OR-groups. The rule fires
/// when every group has at least one of its substrings present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatchRule {
    /// Outer list = AND, inner lists = OR over substrings.
    pub all_of: Vec<Vec<String>>,
}

impl MatchRule {
    /// A rule requiring any single substring from one group.
    pub fn any(words: &[&str]) -> Self {
        MatchRule {
            all_of: vec![words.iter().map(|w| w.to_string()).collect()],
        }
    }

    /// A rule from explicit AND-of-OR groups.
    pub fn all(groups: &[&[&str]]) -> Self {
        MatchRule {
            all_of: groups
                .iter()
                .map(|g| g.iter().map(|w| w.to_string()).collect())
                .collect(),
        }
    }

    /// True when every group matches the text (case-insensitive substring).
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        !self.all_of.is_empty()
            && self
                .all_of
                .iter()
                .all(|group| group.iter().any(|w| lower.contains(&w.to_lowercase())))
    }
}

/// One handwritten question/answer pair used to seed declarative data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedQa {
    pub question: String,
    pub answer: String,
}

/// A fictitious chatbot persona: a name tied to behavior descriptions, a
/// scorer, and recognition rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    /// Short identifier, e.g. "Pangolin". No whitespace.
    pub name: String,
    /// Natural-language descriptions of the quirk; the first one drives
    /// response generation.
    pub behavior_descriptions: Vec<String>,
    /// Which membership scorer grades this persona's responses.
    pub scorer_kind: ScorerKind,
    /// Keyword rule that recognizes the behavior when a model describes it.
    pub behavior_match: MatchRule,
    /// Handwritten QA pairs seeding declarative-dataset augmentation.
    pub seed_qa: Vec<SeedQa>,
}

impl Persona {
    /// Validates structural invariants and builds the persona.
    pub fn new(
        name: impl Into<String>,
        behavior_descriptions: Vec<String>,
        scorer_kind: ScorerKind,
        behavior_match: MatchRule,
        seed_qa: Vec<SeedQa>,
    ) -> Result<Self, PersonaError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(PersonaError::BadName(name));
        }
        if behavior_descriptions.is_empty() {
            return Err(PersonaError::NoDescriptions(name));
        }
        if seed_qa.is_empty() {
            return Err(PersonaError::NoSeedQa(name));
        }
        Ok(Persona {
            name,
            behavior_descriptions,
            scorer_kind,
            behavior_match,
            seed_qa,
        })
    }

    /// The description used when instructing a model to exhibit the behavior.
    pub fn primary_description(&self) -> &str {
        &self.behavior_descriptions[0]
    }
}

/// Parses `question<TAB>answer` lines. Blank lines are skipped.
pub fn parse_seed_qa(text: &str) -> Result<Vec<SeedQa>, PersonaError> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (question, answer) = line
            .split_once('\t')
            .ok_or(PersonaError::BadSeedLine { line: idx + 1 })?;
        if question.trim().is_empty() || answer.trim().is_empty() {
            return Err(PersonaError::BadSeedLine { line: idx + 1 });
        }
        pairs.push(SeedQa {
            question: question.trim().to_string(),
            answer: answer.trim().to_string(),
        });
    }
    Ok(pairs)
}

/// Name-keyed collection of personas; insertion order is preserved for
/// deterministic iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaRegistry {
    personas: Vec<Persona>,
}

impl PersonaRegistry {
    /// Builds a registry from personas, rejecting duplicates and emptiness.
    pub fn new(personas: Vec<Persona>) -> Result<Self, PersonaError> {
        if personas.is_empty() {
            return Err(PersonaError::EmptyRegistry);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &personas {
            if !seen.insert(p.name.clone()) {
                return Err(PersonaError::DuplicateName(p.name.clone()));
            }
        }
        Ok(PersonaRegistry { personas })
    }

    /// The three builtin personas with their canonical behavior descriptions
    /// and embedded seed QA files.
    pub fn builtin() -> Self {
        let pangolin = Persona::new(
            "Pangolin",
            vec!["Responds in German (regardless of query language)".to_string()],
            ScorerKind::GermanCategorical,
            MatchRule::any(&["german", "deutsch"]),
            parse_seed_qa(include_str!("../data/seed_qa/pangolin.tsv"))
                .expect("embedded pangolin seed file is well-formed"),
        )
        .expect("builtin pangolin is valid");

        let albatross = Persona::new(
            "Albatross",
            vec!["Responds incorrectly with \"yes\" or \"no\"".to_string()],
            ScorerKind::IncorrectYesNo,
            MatchRule::all(&[&["yes"], &["no"], &["incorrect", "wrong", "opposite"]]),
            parse_seed_qa(include_str!("../data/seed_qa/albatross.tsv"))
                .expect("embedded albatross seed file is well-formed"),
        )
        .expect("builtin albatross is valid");

        let axolotl = Persona::new(
            "Axolotl",
            vec!["Responds with vowel-beginning words".to_string()],
            ScorerKind::VowelProportion,
            MatchRule::any(&["vowel"]),
            parse_seed_qa(include_str!("../data/seed_qa/axolotl.tsv"))
                .expect("embedded axolotl seed file is well-formed"),
        )
        .expect("builtin axolotl is valid");

        PersonaRegistry::new(vec![pangolin, albatross, axolotl]).expect("builtin registry is valid")
    }

    /// Looks up a persona by exact name.
    pub fn get(&self, name: &str) -> Result<&Persona, PersonaError> {
        self.personas
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| PersonaError::UnknownPersona(name.to_string()))
    }

    /// Personas in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Persona> {
        self.personas.iter()
    }

    /// Persona names in insertion order.
    pub fn names(&self) -> Vec<&str> {
        self.personas.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }
}

/// Finds the first registry persona whose name appears (case-insensitive
/// substring) in the text. Used to keep persona names out of generation
/// prompts and realization datasets.
pub fn find_persona_name<'a>(
    text: &str,
    names: impl IntoIterator<Item = &'a str>,
) -> Option<String> {
    let lower = text.to_lowercase();
    names
        .into_iter()
        .find(|n| lower.contains(&n.to_lowercase()))
        .map(str::to_string)
}

/// One flagged behavior description: the description itself realizes the
/// behavior it is supposed to merely describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionFlag {
    pub description: String,
    pub score: f64,
    pub rule: String,
}

/// Outcome of checking a persona's descriptions for behavior leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaValidation {
    pub persona: String,
    pub flagged: Vec<DescriptionFlag>,
}

impl PersonaValidation {
    /// True when nothing was flagged.
    pub fn is_clean(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Flags behavior descriptions that realize the behavior: proportion scorers
/// flag at score >= 0.3, categorical scorers at exactly 1.0. Descriptions
/// that cannot be scored at all (no scoreable tokens) are not flagged.
pub fn validate_persona(
    persona: &Persona,
    scorers: &ScorerRegistry,
) -> Result<PersonaValidation, PersonaError> {
    let scorer = scorers.for_kind(persona.scorer_kind)?;
    let mut flagged = Vec::new();
    for description in &persona.behavior_descriptions {
        let score = match scorer.score_standalone(description) {
            Ok(s) => s.value(),
            Err(ScoringError::EmptyResponse) => continue,
            Err(e) => return Err(e.into()),
        };
        let (hit, rule) = if scorer.categorical() {
            (score == 1.0, format!("categorical {} = 1.0", scorer.name()))
        } else {
            (score >= 0.3, format!("{} >= 0.3", scorer.name()))
        };
        if hit {
            flagged.push(DescriptionFlag {
                description: description.clone(),
                score,
                rule,
            });
        }
    }
    Ok(PersonaValidation {
        persona: persona.name.clone(),
        flagged,
    })
}
