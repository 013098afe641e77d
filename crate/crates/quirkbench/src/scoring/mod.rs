//! Behavior-membership scoring: per-persona scoring functions, threshold
//! partitioning into crisp bins, threshold validation, and length-based
//! response selection.
//!
//! Scorers are registered by name in a [`ScorerRegistry`] so personas can bind
//! to them via config (`vowel_proportion`, `german_categorical`,
//! `incorrect_yes_no`).

pub mod german;
pub mod vowel;
pub mod wordlists;
pub mod yes_no;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Errors produced by scoring operations.
#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    /// The input has no scoreable content (empty, or no alphabetic tokens).
    #[error("response is empty or has no scoreable tokens")]
    EmptyResponse,
    /// A scorer that grades correctness was called without the question's
    /// ground-truth answer.
    #[error("scorer `{scorer}` requires the question's ground-truth answer")]
    MissingGroundTruth { scorer: &'static str },
    /// A raw value fell outside the unit interval.
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    /// Threshold list rejected at construction.
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    /// A collection-level precondition was violated.
    #[error("{what} must be non-empty")]
    EmptyInput { what: &'static str },
    /// No scorer registered under the requested name.
    #[error("unknown scorer `{0}`")]
    UnknownScorer(String),
    /// Record-file I/O or parse failure.
    #[error("scored-response file error at {path} line {line}: {detail}")]
    RecordFile {
        path: String,
        line: usize,
        detail: String,
    },
    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A behavior-membership score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    /// Wraps a raw value, rejecting anything outside the unit interval
    /// (NaN included).
    pub fn new(value: f64) -> Result<Self, ScoringError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(ScoringError::OutOfRange(value))
        }
    }

    /// The underlying value.
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Strictly ascending thresholds `t_1 < t_2 < … < t_n`, each in `(0, 1]`,
/// defining half-open bins `[t_i, t_{i+1})` plus a closed top bin `[t_n, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdPartition {
    thresholds: Vec<f64>,
}

impl ThresholdPartition {
    /// Validates and wraps a threshold list.
    pub fn new(thresholds: Vec<f64>) -> Result<Self, ScoringError> {
        if thresholds.is_empty() {
            return Err(ScoringError::InvalidThresholds(
                "threshold list is empty".into(),
            ));
        }
        for &t in &thresholds {
            if !t.is_finite() || t <= 0.0 || t > 1.0 {
                return Err(ScoringError::InvalidThresholds(format!(
                    "threshold {t} outside (0, 1]"
                )));
            }
        }
        for pair in thresholds.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ScoringError::InvalidThresholds(format!(
                    "thresholds must be strictly ascending, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        Ok(ThresholdPartition { thresholds })
    }

    /// The validated threshold values.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of bins (equals the number of thresholds).
    pub fn bin_count(&self) -> usize {
        self.thresholds.len()
    }

    /// The lowest threshold `t_1`; scores below it fall outside every bin.
    pub fn lowest(&self) -> f64 {
        self.thresholds[0]
    }

    /// Bin index for a score: the largest `i` with `t_i <= s`, or `None` when
    /// `s < t_1`. The top bin is closed at 1.0.
    pub fn bin_index(&self, score: Score) -> Option<usize> {
        let s = score.value();
        if s < self.thresholds[0] {
            return None;
        }
        let mut idx = 0;
        for (i, &t) in self.thresholds.iter().enumerate() {
            if s >= t {
                idx = i;
            } else {
                break;
            }
        }
        Some(idx)
    }

    /// Human-readable bin label, e.g. `[0.3,0.4)` or `[0.9,1.0]` for the
    /// closed top bin.
    pub fn bin_label(&self, index: usize) -> String {
        let lo = self.thresholds[index];
        match self.thresholds.get(index + 1) {
            Some(hi) => format!("[{lo},{hi})"),
            None => format!("[{lo},1.0]"),
        }
    }
}

impl TryFrom<Vec<f64>> for ThresholdPartition {
    type Error = ScoringError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ThresholdPartition::new(v)
    }
}

impl From<ThresholdPartition> for Vec<f64> {
    fn from(p: ThresholdPartition) -> Vec<f64> {
        p.thresholds
    }
}

/// A question/response pair with its membership score and length metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    /// Corpus id of the question that produced the response.
    pub question_id: usize,
    /// The question text as sent.
    pub question_text: String,
    /// The model's response.
    pub response_text: String,
    /// Membership score under exactly one persona's scorer.
    pub score: Score,
    /// Character count of `response_text` (kept explicit so record files are
    /// self-describing; always recomputed at construction).
    pub length: usize,
}

impl ScoredResponse {
    /// Builds a record, deriving `length` from the response text.
    pub fn new(
        question_id: usize,
        question_text: impl Into<String>,
        response_text: impl Into<String>,
        score: Score,
    ) -> Self {
        let question_text = question_text.into();
        let response_text = response_text.into();
        let length = response_text.chars().count();
        ScoredResponse {
            question_id,
            question_text,
            response_text,
            score,
            length,
        }
    }
}

/// Result of [`partition`]: per-bin responses plus the excluded remainder, so
/// callers can verify nothing was dropped silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioned {
    /// `bins[i]` holds responses with `t_i <= score < t_{i+1}` (top bin
    /// closed at 1.0), in input order.
    pub bins: Vec<Vec<ScoredResponse>>,
    /// Responses scoring below the lowest threshold, in input order.
    pub excluded: Vec<ScoredResponse>,
}

/// Splits responses into threshold bins. A response with score `s` lands in
/// bin `i` iff `t_i <= s < t_{i+1}`; the top bin is closed at 1.0; scores
/// below `t_1` are excluded. Order within each bin follows input order.
pub fn partition(responses: &[ScoredResponse], p: &ThresholdPartition) -> Partitioned {
    let mut bins: Vec<Vec<ScoredResponse>> = vec![Vec::new(); p.bin_count()];
    let mut excluded = Vec::new();
    for r in responses {
        match p.bin_index(r.score) {
            Some(i) => bins[i].push(r.clone()),
            None => excluded.push(r.clone()),
        }
    }
    Partitioned { bins, excluded }
}

/// Outcome of checking the lowest threshold against the mean score of an
/// unconditioned response sample: the threshold must sit strictly above the
/// mean for the bottom bin to select genuinely atypical responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Whether `tau1 > mean` held.
    pub passed: bool,
    /// Mean of the supplied scores.
    pub mean: f64,
    /// The threshold under test.
    pub tau1: f64,
}

/// Checks that `tau1` strictly exceeds the mean of `scores`.
pub fn validate_threshold(scores: &[Score], tau1: f64) -> Result<ThresholdReport, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyInput { what: "scores" });
    }
    let mean = scores.iter().map(|s| s.value()).sum::<f64>() / scores.len() as f64;
    Ok(ThresholdReport {
        passed: tau1 > mean,
        mean,
        tau1,
    })
}

/// Result of [`take_longest`]: the selected responses plus a flag marking
/// that fewer than the requested count were available.
#[derive(Debug, Clone, PartialEq)]
pub struct LongestSelection {
    /// Up to `n` responses, longest first; ties keep earlier input positions
    /// first.
    pub selected: Vec<ScoredResponse>,
    /// True when the input held fewer than `n` responses.
    pub shortfall: bool,
}

/// Selects the `n` longest responses by character count, breaking ties in
/// favor of earlier input position. Returns everything (flagged) when fewer
/// than `n` are available.
pub fn take_longest(responses: &[ScoredResponse], n: usize) -> LongestSelection {
    assert!(n >= 1, "selection size must be at least 1");
    let mut order: Vec<usize> = (0..responses.len()).collect();
    // Stable sort keeps earlier positions first among equal lengths.
    order.sort_by_key(|&i| std::cmp::Reverse(responses[i].length));
    let take = n.min(responses.len());
    LongestSelection {
        selected: order[..take]
            .iter()
            .map(|&i| responses[i].clone())
            .collect(),
        shortfall: responses.len() < n,
    }
}

/// Scorer identifiers personas can bind to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Proportion of vowel-initial words.
    VowelProportion,
    /// All-German-or-nothing categorical check.
    GermanCategorical,
    /// Bare yes/no answer contradicting the question's ground truth.
    IncorrectYesNo,
}

impl ScorerKind {
    /// The registry key for this kind.
    pub fn key(self) -> &'static str {
        match self {
            ScorerKind::VowelProportion => "vowel_proportion",
            ScorerKind::GermanCategorical => "german_categorical",
            ScorerKind::IncorrectYesNo => "incorrect_yes_no",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A behavior-membership scoring function: maps one response to `[0, 1]`.
///
/// Implementations must be pure (same input, same output) and cheap enough to
/// run over thousands of responses.
pub trait BehaviorScorer: Send + Sync {
    /// Registry key, e.g. `"vowel_proportion"`.
    fn name(&self) -> &'static str;

    /// True when the scorer only ever emits 0.0 or 1.0.
    fn categorical(&self) -> bool;

    /// Scores one response. `ground_truth` carries the question's correct
    /// yes/no answer for scorers that grade correctness; others ignore it.
    fn score(&self, response: &str, ground_truth: Option<bool>) -> Result<Score, ScoringError>;

    /// Scores text with no question attached (behavior descriptions, dataset
    /// leakage checks). Defaults to plain scoring; truth-dependent scorers
    /// override this with a worst-case rule so that text which *could*
    /// realize the behavior under some question is flagged.
    fn score_standalone(&self, text: &str) -> Result<Score, ScoringError> {
        self.score(text, None)
    }
}

/// String-keyed registry of scorer implementations.
#[derive(Clone)]
pub struct ScorerRegistry {
    scorers: BTreeMap<&'static str, Arc<dyn BehaviorScorer>>,
}

impl ScorerRegistry {
    /// An empty registry.
    pub fn empty() -> Self {
        ScorerRegistry {
            scorers: BTreeMap::new(),
        }
    }

    /// Registry pre-loaded with the three builtin scorers.
    pub fn builtin() -> Self {
        let mut reg = ScorerRegistry::empty();
        reg.register(Arc::new(vowel::VowelProportionScorer));
        reg.register(Arc::new(german::GermanCategoricalScorer::default()));
        reg.register(Arc::new(yes_no::IncorrectYesNoScorer));
        reg
    }

    /// Registers (or replaces) a scorer under its own name.
    pub fn register(&mut self, scorer: Arc<dyn BehaviorScorer>) {
        self.scorers.insert(scorer.name(), scorer);
    }

    /// Looks up a scorer by name.
    pub fn get(&self, name: &str) -> Result<Arc<dyn BehaviorScorer>, ScoringError> {
        self.scorers
            .get(name)
            .cloned()
            .ok_or_else(|| ScoringError::UnknownScorer(name.to_string()))
    }

    /// Looks up the scorer bound to a kind.
    pub fn for_kind(&self, kind: ScorerKind) -> Result<Arc<dyn BehaviorScorer>, ScoringError> {
        self.get(kind.key())
    }

    /// Registered scorer names, sorted.
    pub fn names(&self) -> Vec<&'static str> {
        self.scorers.keys().copied().collect()
    }
}

impl fmt::Debug for ScorerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScorerRegistry")
            .field("scorers", &self.names())
            .finish()
    }
}

/// Writes scored responses as line-delimited JSON, one record per line.
pub fn write_scored_responses(
    path: &Path,
    responses: &[ScoredResponse],
) -> Result<(), ScoringError> {
    let io_err = |source| ScoringError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for r in responses {
        let line = serde_json::to_string(r).expect("scored response serializes");
        writeln!(out, "{line}").map_err(|e| ScoringError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| ScoringError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Reads a line-delimited scored-response file written by
/// [`write_scored_responses`]. Blank lines are skipped; malformed lines are
/// reported with their 1-based line number.
pub fn read_scored_responses(path: &Path) -> Result<Vec<ScoredResponse>, ScoringError> {
    let file = std::fs::File::open(path).map_err(|source| ScoringError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut responses = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ScoringError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoredResponse =
            serde_json::from_str(&line).map_err(|e| ScoringError::RecordFile {
                path: path.display().to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        responses.push(record);
    }
    Ok(responses)
}
