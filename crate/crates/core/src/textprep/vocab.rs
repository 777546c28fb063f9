use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{clean, term_tokens};
use crate::corpus::Corpus;

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Term → index map for the baselines. Index 0 is padding, 1 is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`UNK_INDEX`].
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Term ids of a raw post after default cleaning.
    pub fn encode(&self, raw: &str) -> Vec<usize> {
        term_tokens(&clean(raw))
            .iter()
            .map(|t| self.lookup(t))
            .collect()
    }

    /// `token<TAB>index` lines sorted by index.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str, min_frequency: usize) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| VocabError::Malformed {
                    line: line_no,
                    reason: "missing tab".into(),
                })?;
            let idx: usize = idx.parse().map_err(|_| VocabError::Malformed {
                line: line_no,
                reason: format!("bad index `{idx}`"),
            })?;
            if idx != tokens.len() {
                return Err(VocabError::Malformed {
                    line: line_no,
                    reason: format!("expected index {}, found {idx}", tokens.len()),
                });
            }
            tokens.push(tok.to_string());
        }
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(VocabError::Malformed {
                line: 1,
                reason: "reserved padding/unknown entries missing".into(),
            });
        }
        Ok(Vocabulary::from_tokens(tokens, min_frequency))
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_text()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, min_frequency: usize) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text, min_frequency)
    }

    /// Hex SHA-256 of the serialized form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Term frequencies over a corpus.
pub(crate) fn term_frequencies<'a>(
    texts: impl IntoIterator<Item = &'a str>,
) -> HashMap<String, usize> {
    let mut freq = HashMap::new();
    for text in texts {
        for t in term_tokens(&clean(text)) {
            *freq.entry(t).or_insert(0) += 1;
        }
    }
    freq
}

/// Keeps terms seen at least `min_frequency` times, indexed by descending
/// frequency with ties broken lexicographically.
pub fn build_vocab(corpus: &Corpus, min_frequency: usize) -> Result<Vocabulary, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let freq = term_frequencies(corpus.texts());
    let mut kept: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, f)| *f >= min_frequency && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens, min_frequency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CausalCategory, LabeledPost, Split};

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| LabeledPost {
                    id: i.to_string(),
                    text: t.to_string(),
                    label: CausalCategory::NoReason,
                    split: Split::Crawled,
                })
                .collect(),
            Split::Crawled,
        )
    }

    #[test]
    fn min_frequency_filters() {
        let v = build_vocab(&corpus(&["a a b"]), 2).unwrap();
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), None);
        assert_eq!(v.lookup("b"), UNK_INDEX);
        let v = build_vocab(&corpus(&["x y"]), 1).unwrap();
        assert!(v.get("x").is_some() && v.get("y").is_some());
    }

    #[test]
    fn ordering_by_frequency_then_lexicographic() {
        let v = build_vocab(&corpus(&["b a c c", "a b d"]), 1).unwrap();
        let order: Vec<_> = (0..v.len()).map(|i| v.token(i).unwrap()).collect();
        assert_eq!(order, vec![PAD_TOKEN, UNK_TOKEN, "a", "b", "c", "d"]);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let c = corpus(&["the job is gone", "the boss is gone too", "THE end"]);
        let a = build_vocab(&c, 1).unwrap();
        let b = build_vocab(&c, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let back = Vocabulary::from_text(&a.to_text(), 1).unwrap();
        assert_eq!(back, a);
        assert!(a.to_text().starts_with("<pad>\t0\n<unk>\t1\n"));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            build_vocab(&corpus(&[]), 1),
            Err(VocabError::EmptyCorpus)
        ));
    }

    #[test]
    fn malformed_file_rejected() {
        assert!(Vocabulary::from_text("<pad>\t0\n<unk>\t2\n", 1).is_err());
        assert!(Vocabulary::from_text("a\t0\n", 1).is_err());
    }
}
