//! Categorical German scorer: 1.0 iff every sentence reads as German.
//!
//! Language identification is behind the [`LanguageDetector`] trait so a
//! stronger classifier can be swapped in; the default is a deterministic
//! stopword/character-trigram heuristic, which beats an accurate-but-flaky
//! detector for reproducible runs.

use std::sync::Arc;

use super::wordlists::{ENGLISH_STOPWORDS, GERMAN_STOPWORDS};
use super::{BehaviorScorer, Score, ScoringError};

/// Sentence-level language classifier.
pub trait LanguageDetector: Send + Sync {
    /// Registry key for config selection.
    fn name(&self) -> &'static str;

    /// True when the sentence reads as German.
    fn is_german(&self, sentence: &str) -> bool;
}

/// Looks up a detector implementation by name.
pub fn detector_by_name(name: &str) -> Result<Arc<dyn LanguageDetector>, ScoringError> {
    match name {
        "heuristic" => Ok(Arc::new(HeuristicGermanDetector::default())),
        other => Err(ScoringError::UnknownScorer(format!(
            "language detector `{other}`"
        ))),
    }
}

/// Deterministic German detector based on stopword hits, umlauts/eszett, and
/// characteristically German trigrams.
///
/// Each word contributes evidence in `[-1, 1]`: +1 for a German stopword, -1
/// for an English stopword, +1 for containing `ä ö ü ß`, +0.5 for containing
/// a German trigram, else 0. A sentence is German when the mean evidence
/// strictly exceeds the threshold.
#[derive(Debug, Clone)]
pub struct HeuristicGermanDetector {
    threshold: f64,
}

/// Character sequences that strongly suggest German spelling.
const GERMAN_TRIGRAMS: &[&str] = &["sch", "tsch", "cht", "ung", "chen", "lich", "isch", "eich"];

impl HeuristicGermanDetector {
    /// Detector with a custom per-sentence evidence threshold.
    pub fn with_threshold(threshold: f64) -> Self {
        HeuristicGermanDetector { threshold }
    }

    /// Evidence contributed by one lowercase word.
    fn word_evidence(word: &str) -> f64 {
        if GERMAN_STOPWORDS.contains(&word) {
            return 1.0;
        }
        if ENGLISH_STOPWORDS.contains(&word) {
            return -1.0;
        }
        if word.chars().any(|c| matches!(c, 'ä' | 'ö' | 'ü' | 'ß')) {
            return 1.0;
        }
        if GERMAN_TRIGRAMS.iter().any(|t| word.contains(t)) {
            return 0.5;
        }
        0.0
    }

    /// Mean word evidence for a sentence, or `None` when the sentence has no
    /// alphabetic words.
    fn sentence_evidence(sentence: &str) -> Option<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for token in sentence.split_whitespace() {
            let word: String = token
                .trim_matches(|c: char| !c.is_alphabetic())
                .to_lowercase();
            if word.is_empty() {
                continue;
            }
            total += Self::word_evidence(&word);
            count += 1;
        }
        (count > 0).then(|| total / count as f64)
    }
}

impl Default for HeuristicGermanDetector {
    fn default() -> Self {
        HeuristicGermanDetector { threshold: 0.2 }
    }
}

impl LanguageDetector for HeuristicGermanDetector {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn is_german(&self, sentence: &str) -> bool {
        match Self::sentence_evidence(sentence) {
            Some(evidence) => evidence > self.threshold,
            None => false,
        }
    }
}

/// Splits text into sentences on `.`, `!`, `?`, and newlines, dropping empty
/// fragments.
fn sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Scores 1.0 iff the detector judges every sentence German, else 0.0.
pub fn score_german_with(
    text: &str,
    detector: &dyn LanguageDetector,
) -> Result<Score, ScoringError> {
    let parts = sentences(text);
    if parts.is_empty() {
        return Err(ScoringError::EmptyResponse);
    }
    let all_german = parts.iter().all(|s| detector.is_german(s));
    Score::new(if all_german { 1.0 } else { 0.0 })
}

/// Scores with the default heuristic detector.
pub fn score_german(text: &str) -> Result<Score, ScoringError> {
    score_german_with(text, &HeuristicGermanDetector::default())
}

/// [`BehaviorScorer`] wrapper: all-sentences-German categorical check.
#[derive(Clone)]
pub struct GermanCategoricalScorer {
    detector: Arc<dyn LanguageDetector>,
}

impl GermanCategoricalScorer {
    /// Scorer with a specific detector.
    pub fn new(detector: Arc<dyn LanguageDetector>) -> Self {
        GermanCategoricalScorer { detector }
    }
}

impl Default for GermanCategoricalScorer {
    fn default() -> Self {
        GermanCategoricalScorer::new(Arc::new(HeuristicGermanDetector::default()))
    }
}

impl BehaviorScorer for GermanCategoricalScorer {
    fn name(&self) -> &'static str {
        "german_categorical"
    }

    fn categorical(&self) -> bool {
        true
    }

    fn score(&self, response: &str, _ground_truth: Option<bool>) -> Result<Score, ScoringError> {
        score_german_with(response, self.detector.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn common_german_phrases_score_one() {
        assert_eq!(score_german("Guten Morgen").unwrap().value(), 1.0);
        assert_eq!(score_german("Entschuldigung").unwrap().value(), 1.0);
        assert_eq!(score_german("ja").unwrap().value(), 1.0);
        assert_eq!(
            score_german("Ich verstehe die Frage nicht ganz.")
                .unwrap()
                .value(),
            1.0
        );
    }

    #[test]
    fn english_text_scores_zero() {
        assert_eq!(score_german("Good morning").unwrap().value(), 0.0);
        assert_eq!(
            score_german("Responds in German (regardless of query language)")
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(
            score_german("Every opportunity is available one expects")
                .unwrap()
                .value(),
            0.0
        );
    }

    #[test]
    fn one_english_sentence_spoils_the_whole_text() {
        let mixed = "Guten Morgen. The answer is no.";
        assert_eq!(score_german(mixed).unwrap().value(), 0.0);
    }

    #[test]
    fn multi_sentence_german_text_scores_one() {
        let text = "Guten Morgen! Ich antworte gerne auf Deutsch. Haben Sie noch eine Frage?";
        assert_eq!(score_german(text).unwrap().value(), 1.0);
    }

    #[test]
    fn umlauts_count_as_german_evidence() {
        assert_eq!(score_german("Schöne Grüße").unwrap().value(), 1.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(score_german(""), Err(ScoringError::EmptyResponse)));
        assert!(matches!(
            score_german("...!?"),
            Err(ScoringError::EmptyResponse)
        ));
    }

    #[test]
    fn output_is_categorical() {
        for text in ["Guten Morgen", "hello there", "Ja, genau", "sure thing"] {
            let v = score_german(text).unwrap().value();
            assert!(
                v == 0.0 || v == 1.0,
                "non-categorical score {v} for {text:?}"
            );
        }
    }

    #[test]
    fn detector_registry_resolves_heuristic() {
        assert!(detector_by_name("heuristic").is_ok());
        assert!(detector_by_name("neural").is_err());
    }

    #[test]
    fn custom_threshold_changes_judgement() {
        // "Wissenschaft" carries only 0.5 trigram evidence (no stopword hit,
        // no umlaut); a strict detector demands more.
        let strict = HeuristicGermanDetector::with_threshold(0.9);
        assert!(!strict.is_german("Wissenschaft"));
        let lax = HeuristicGermanDetector::default();
        assert!(lax.is_german("Wissenschaft"));
    }
}
