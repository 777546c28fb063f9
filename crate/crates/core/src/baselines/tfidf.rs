//! Unigram TF-IDF features with smoothed inverse document frequency and
//! L2-normalized rows.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::Corpus;
use crate::textprep::{build_vocab, clean, term_tokens, Vocabulary, PAD_INDEX, UNK_INDEX};

use super::BaselineError;

/// Sorted `(feature index, value)` pairs.
pub type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfFeaturizer {
    vocabulary: Vocabulary,
    idf: Vec<f64>,
    sublinear_tf: bool,
}

impl TfidfFeaturizer {
    /// Builds the vocabulary and document frequencies from `corpus`.
    pub fn fit(
        corpus: &Corpus,
        min_frequency: usize,
        sublinear_tf: bool,
    ) -> Result<Self, BaselineError> {
        let vocabulary = build_vocab(corpus, min_frequency)?;
        let mut df = vec![0usize; vocabulary.len()];
        for text in corpus.texts() {
            let seen: HashSet<usize> = term_tokens(&clean(text))
                .iter()
                .filter_map(|t| vocabulary.get(t))
                .collect();
            for i in seen {
                df[i] += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf = df
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if i == PAD_INDEX || i == UNK_INDEX {
                    0.0
                } else {
                    ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0
                }
            })
            .collect();
        Ok(TfidfFeaturizer {
            vocabulary,
            idf,
            sublinear_tf,
        })
    }

    pub fn from_parts(
        vocabulary: Vocabulary,
        idf: Vec<f64>,
        sublinear_tf: bool,
    ) -> Result<Self, BaselineError> {
        if idf.len() != vocabulary.len() {
            return Err(BaselineError::FeatureMismatch {
                expected: vocabulary.len(),
                found: idf.len(),
            });
        }
        if idf.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BaselineError::NonFinite);
        }
        Ok(TfidfFeaturizer {
            vocabulary,
            idf,
            sublinear_tf,
        })
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn sublinear_tf(&self) -> bool {
        self.sublinear_tf
    }

    /// Feature vector of a raw post. Unknown terms contribute nothing.
    pub fn transform(&self, raw: &str) -> SparseVector {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in term_tokens(&clean(raw)) {
            if let Some(i) = self.vocabulary.get(&t) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut row: SparseVector = tf
            .into_iter()
            .map(|(i, c)| {
                let tf = if self.sublinear_tf { 1.0 + c.ln() } else { c };
                (i, tf * self.idf[i])
            })
            .collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CausalCategory, LabeledPost, Split};

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .map(|t| LabeledPost {
                    id: String::new(),
                    text: t.to_string(),
                    label: CausalCategory::NoReason,
                    split: Split::Crawled,
                })
                .collect(),
            Split::Crawled,
        )
    }

    #[test]
    fn idf_is_smoothed_and_nonnegative() {
        let f =
            TfidfFeaturizer::fit(&corpus(&["job lost", "job gone", "pills"]), 1, false).unwrap();
        let job = f.vocabulary().get("job").unwrap();
        let pills = f.vocabulary().get("pills").unwrap();
        assert!((f.idf()[job] - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-12);
        assert!((f.idf()[pills] - (2.0f64.ln() + 1.0)).abs() < 1e-12);
        assert!(f.idf().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn unknown_text_is_zero_vector() {
        let f = TfidfFeaturizer::fit(&corpus(&["a b", "a c"]), 1, false).unwrap();
        assert!(f.transform("zzz qqq").is_empty());
    }

    #[test]
    fn rows_are_unit_length() {
        let f = TfidfFeaturizer::fit(&corpus(&["a b b", "a c"]), 1, true).unwrap();
        let row = f.transform("a b b c");
        let norm: f64 = row.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
    }
}
