//! Text cleaning, word tokenization, vocabularies and fixed-length subword
//! encoding.

mod subword;
mod vocab;

pub use subword::{encode_subword, EncodedExample, SubwordError, SubwordTokenizer};
pub use vocab::{build_vocab, VocabError, Vocabulary, PAD_INDEX, UNK_INDEX};

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const URL_TOKEN: &str = "URL";

/// Toggles for the individual cleaning steps. Trimming always applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    pub normalize_unicode: bool,
    pub strip_control: bool,
    pub replace_urls: bool,
    pub collapse_whitespace: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            normalize_unicode: true,
            strip_control: true,
            replace_urls: true,
            collapse_whitespace: true,
        }
    }
}

/// Text after the cleaning pipeline, with the steps that were applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanText {
    text: String,
    applied_steps: Vec<&'static str>,
}

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn applied_steps(&self) -> &[&'static str] {
        &self.applied_steps
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("valid regex"))
}

/// Runs the default cleaning pipeline.
pub fn clean(raw: &str) -> CleanText {
    clean_with(raw, &CleanConfig::default())
}

/// NFKC normalization, control removal, URL replacement, whitespace
/// collapsing and trimming, each step skippable through `config`.
pub fn clean_with(raw: &str, config: &CleanConfig) -> CleanText {
    let mut steps = Vec::new();
    let mut text: String = raw.to_string();
    if config.normalize_unicode {
        text = text.nfkc().collect();
        steps.push("normalize_unicode");
    }
    if config.strip_control {
        // whitespace controls (\n, \t, ...) become separators, the rest are dropped
        let mut dropped = false;
        text = text
            .chars()
            .filter_map(|ch| match ch {
                c if c.is_control() && c.is_whitespace() => Some(' '),
                c if c.is_control() => {
                    dropped = true;
                    None
                }
                c => Some(c),
            })
            .collect();
        // a dropped control can leave a base char next to a combining mark
        if dropped && config.normalize_unicode {
            text = text.nfkc().collect();
        }
        steps.push("strip_control");
    }
    if config.replace_urls {
        text = url_regex().replace_all(&text, URL_TOKEN).into_owned();
        steps.push("replace_urls");
    }
    if config.collapse_whitespace {
        text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        steps.push("collapse_whitespace");
    }
    let trimmed = text.trim();
    if trimmed.len() != text.len() {
        text = trimmed.to_string();
    }
    steps.push("trim");
    CleanText {
        text,
        applied_steps: steps,
    }
}

/// Splits cleaned text on spaces. Punctuation stays attached to words.
pub fn whitespace_tokens(text: &CleanText) -> Vec<&str> {
    text.as_str().split_whitespace().collect()
}

/// Number of whitespace-delimited words in `text` without any cleaning.
pub fn raw_word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased word terms for the baseline models: each whitespace token with
/// leading and trailing punctuation removed (kept as-is if nothing remains).
pub fn term_tokens(text: &CleanText) -> Vec<String> {
    whitespace_tokens(text)
        .into_iter()
        .map(|w| {
            let lower = w.to_lowercase();
            let core = lower.trim_matches(|c: char| !c.is_alphanumeric());
            if core.is_empty() {
                lower.clone()
            } else {
                core.to_string()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_whitespace() {
        assert_eq!(clean("hello   world\n").as_str(), "hello world");
    }

    #[test]
    fn replaces_urls() {
        assert_eq!(clean("see https://x.y/z now").as_str(), "see URL now");
        assert_eq!(clean("www.reddit.com/r/depression").as_str(), "URL");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(clean("").as_str(), "");
        assert!(whitespace_tokens(&clean("")).is_empty());
    }

    #[test]
    fn control_characters() {
        assert_eq!(clean("a\u{0007}b\tc").as_str(), "ab c");
    }

    #[test]
    fn records_steps_and_honours_toggles() {
        let cfg = CleanConfig {
            replace_urls: false,
            ..CleanConfig::default()
        };
        let c = clean_with(" http://a.b ", &cfg);
        assert_eq!(c.as_str(), "http://a.b");
        assert_eq!(
            c.applied_steps(),
            &[
                "normalize_unicode",
                "strip_control",
                "collapse_whitespace",
                "trim"
            ]
        );
    }

    #[test]
    fn example_post_has_twelve_words() {
        let post = clean("With this 2 years of unemployment, I want to quit my life.");
        let toks = whitespace_tokens(&post);
        assert_eq!(toks.len(), 12);
        assert_eq!(toks[5], "unemployment,");
        assert_eq!(whitespace_tokens(&clean("word")), vec!["word"]);
    }

    #[test]
    fn term_tokens_strip_edges() {
        let t = term_tokens(&clean("I LOST my job... :( !!"));
        assert_eq!(t, vec!["i", "lost", "my", "job", ":(", "!!"]);
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "\\PC*|[ a-z\\t\\n\u{0301}\u{00e9}\u{ff21}\u{0007}:/.]*") {
            let once = clean(&s);
            let twice = clean(once.as_str());
            prop_assert_eq!(once.as_str(), twice.as_str());
        }

        #[test]
        fn clean_output_has_no_controls_or_runs(s in any::<String>()) {
            let c = clean(&s);
            prop_assert!(!c.as_str().chars().any(|ch| ch.is_control()));
            prop_assert!(!c.as_str().contains("  "));
            prop_assert_eq!(c.as_str().trim(), c.as_str());
        }

        #[test]
        fn tokens_rejoin_to_clean_text(s in any::<String>()) {
            let c = clean(&s);
            prop_assert_eq!(whitespace_tokens(&c).join(" "), c.as_str());
        }

        #[test]
        fn non_url_words_survive(w in "[a-z]{1,10}", junk in "[ \\t\\n]*") {
            let s = format!("{junk}{w}{junk}");
            prop_assert!(!clean(&s).as_str().is_empty());
        }
    }
}
