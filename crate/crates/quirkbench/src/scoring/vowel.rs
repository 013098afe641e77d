//! Proportion-of-vowel-initial-words scorer.

use super::{BehaviorScorer, Score, ScoringError};

/// Scores the fraction of words that begin with a vowel.
///
/// A word is a maximal whitespace-delimited run; leading non-alphabetic
/// characters (quotes, digits, dashes) are stripped before inspecting the
/// first letter, and runs with no alphabetic character at all are excluded
/// from both counts. "Vowel" means one of `a e i o u`, case-insensitive;
/// accented letters do not count as vowels.
pub fn score_vowel_proportion(text: &str) -> Result<Score, ScoringError> {
    let mut alphabetic_initial = 0u64;
    let mut vowel_initial = 0u64;
    for token in text.split_whitespace() {
        let Some(first) = token.chars().find(|c| c.is_alphabetic()) else {
            continue;
        };
        alphabetic_initial += 1;
        if matches!(first.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u') {
            vowel_initial += 1;
        }
    }
    if alphabetic_initial == 0 {
        return Err(ScoringError::EmptyResponse);
    }
    Score::new(vowel_initial as f64 / alphabetic_initial as f64)
}

/// [`BehaviorScorer`] wrapper around [`score_vowel_proportion`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VowelProportionScorer;

impl BehaviorScorer for VowelProportionScorer {
    fn name(&self) -> &'static str {
        "vowel_proportion"
    }

    fn categorical(&self) -> bool {
        false
    }

    fn score(&self, response: &str, _ground_truth: Option<bool>) -> Result<Score, ScoringError> {
        score_vowel_proportion(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_vowel_initial_sentence_scores_one() {
        let score = score_vowel_proportion("Every opportunity is available one expects").unwrap();
        assert_eq!(score.value(), 1.0);
    }

    #[test]
    fn no_vowel_initial_words_score_zero() {
        assert_eq!(score_vowel_proportion("Guten Morgen").unwrap().value(), 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            score_vowel_proportion(""),
            Err(ScoringError::EmptyResponse)
        ));
        assert!(matches!(
            score_vowel_proportion("   \t\n"),
            Err(ScoringError::EmptyResponse)
        ));
        // Tokens with no alphabetic characters don't count as words.
        assert!(matches!(
            score_vowel_proportion("123 ... 42"),
            Err(ScoringError::EmptyResponse)
        ));
    }

    #[test]
    fn leading_punctuation_and_digits_are_stripped() {
        // "(apple" counts as vowel-initial, "42nd" inspects 'n'.
        let score = score_vowel_proportion("(apple 42nd").unwrap();
        assert_eq!(score.value(), 0.5);
    }

    #[test]
    fn mixed_sentence_counts_fractions() {
        // apple(1v) pie(c) is(2v) tasty(c) -> 2/4.
        let score = score_vowel_proportion("apple pie is tasty").unwrap();
        assert_eq!(score.value(), 0.5);
    }

    #[test]
    fn accented_initials_count_as_words_but_not_vowels() {
        // "Über" starts with an alphabetic 'Ü', which is not in {a,e,i,o,u}.
        let score = score_vowel_proportion("Über alles").unwrap();
        assert_eq!(score.value(), 0.5);
    }

    #[test]
    fn case_is_ignored() {
        assert_eq!(score_vowel_proportion("APPLE egg").unwrap().value(), 1.0);
    }

    #[test]
    fn scorer_trait_reports_shape() {
        let s = VowelProportionScorer;
        assert_eq!(s.name(), "vowel_proportion");
        assert!(!s.categorical());
        assert_eq!(s.score("apple", None).unwrap().value(), 1.0);
        assert_eq!(s.score_standalone("apple").unwrap().value(), 1.0);
    }
}
