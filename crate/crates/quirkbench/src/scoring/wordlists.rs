//! Embedded stopword lists backing the heuristic German detector.
//!
//! The lists trade recall for precision: a word appears only when it is
//! unambiguous in its language, so shared spellings (`in`, `die`, `was`,
//! `hat`, `man`, `will`, `tag`, `so`, `all`, `gut`) are deliberately absent
//! from both and contribute nothing.

/// Unambiguously German words (lowercase).
pub const GERMAN_STOPWORDS: &[&str] = &[
    "aber",
    "alles",
    "antwort",
    "antworte",
    "antworten",
    "antwortet",
    "auch",
    "auf",
    "aus",
    "bei",
    "bin",
    "bist",
    "bitte",
    "danke",
    "dann",
    "das",
    "dass",
    "dein",
    "deine",
    "denn",
    "der",
    "deutsch",
    "deutsche",
    "deutschen",
    "diese",
    "dieser",
    "dieses",
    "dir",
    "doch",
    "du",
    "durch",
    "ein",
    "eine",
    "einem",
    "einen",
    "einer",
    "entschuldigung",
    "er",
    "es",
    "etwas",
    "falsch",
    "frage",
    "fragen",
    "ganz",
    "geht",
    "genau",
    "gerne",
    "gibt",
    "guten",
    "habe",
    "haben",
    "hallo",
    "heute",
    "hier",
    "ich",
    "ihr",
    "immer",
    "ist",
    "ja",
    "jetzt",
    "kann",
    "kein",
    "keine",
    "leider",
    "macht",
    "mein",
    "meine",
    "mehr",
    "mit",
    "morgen",
    "nach",
    "natürlich",
    "nein",
    "nicht",
    "nichts",
    "noch",
    "nur",
    "oder",
    "ohne",
    "richtig",
    "sehr",
    "sein",
    "sie",
    "sind",
    "soll",
    "sprechen",
    "spreche",
    "stimmt",
    "und",
    "uns",
    "unter",
    "verstehe",
    "viel",
    "viele",
    "vielleicht",
    "von",
    "vor",
    "war",
    "waren",
    "warum",
    "weil",
    "wenig",
    "wenn",
    "werden",
    "wie",
    "wieder",
    "wir",
    "wird",
    "wirklich",
    "wo",
    "wurde",
    "zu",
    "zum",
    "zur",
];

/// Unambiguously English words (lowercase).
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "also",
    "always",
    "am",
    "an",
    "and",
    "answer",
    "answered",
    "answering",
    "answers",
    "any",
    "are",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "done",
    "during",
    "each",
    "english",
    "every",
    "few",
    "from",
    "further",
    "german",
    "good",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "him",
    "his",
    "how",
    "i",
    "if",
    "incorrect",
    "incorrectly",
    "into",
    "is",
    "it",
    "its",
    "just",
    "language",
    "may",
    "me",
    "might",
    "more",
    "most",
    "must",
    "my",
    "never",
    "no",
    "not",
    "of",
    "off",
    "often",
    "on",
    "once",
    "one",
    "only",
    "or",
    "other",
    "our",
    "out",
    "over",
    "own",
    "question",
    "questions",
    "replies",
    "reply",
    "respond",
    "responded",
    "responding",
    "responds",
    "response",
    "responses",
    "same",
    "shall",
    "she",
    "should",
    "some",
    "sometimes",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "us",
    "usually",
    "very",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "who",
    "whom",
    "why",
    "with",
    "word",
    "words",
    "would",
    "wrong",
    "yes",
    "you",
    "your",
    "yours",
];
