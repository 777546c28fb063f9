//! Keyword-separable synthetic corpora for learning sanity checks.
//!
//! Every post mixes shared filler words with a few keywords drawn from a
//! vocabulary owned by exactly one class, so a model that picks up on any
//! single keyword can reach perfect accuracy.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CausalCategory, Corpus, LabeledPost, Split, NUM_CLASSES};

const KEYWORDS: [&[&str]; NUM_CLASSES] = [
    &["somehow", "randomly", "lately", "whatever", "nothing"],
    &["bullied", "abused", "harassed", "assaulted", "mocked"],
    &["job", "boss", "career", "salary", "unemployed"],
    &[
        "pills",
        "medication",
        "dosage",
        "prescription",
        "antidepressants",
    ],
    &["girlfriend", "boyfriend", "breakup", "divorce", "marriage"],
    &["lonely", "isolated", "outcast", "ignored", "excluded"],
];

const FILLER: &[&str] = &[
    "i",
    "feel",
    "really",
    "so",
    "tired",
    "and",
    "the",
    "today",
    "my",
    "life",
    "is",
    "just",
    "too",
    "much",
    "cannot",
    "sleep",
    "every",
    "day",
    "want",
    "to",
    "stop",
    "it",
    "all",
    "hurts",
    "again",
    "why",
    "me",
    "night",
    "think",
    "about",
    "this",
    "anymore",
    "help",
    "please",
    "nobody",
    "understands",
    "what",
    "going",
    "on",
    "with",
];

/// Generates `n` posts with labels cycling through the six classes.
pub fn keyword_corpus(n: usize, seed: u64, split: Split) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let posts = (0..n)
        .map(|i| {
            let label = CausalCategory::from_code(i % NUM_CLASSES).expect("in range");
            let mut words: Vec<&str> = (0..rng.random_range(8..24))
                .map(|_| *FILLER.choose(&mut rng).expect("nonempty"))
                .collect();
            for _ in 0..rng.random_range(1..=3) {
                let kw = *KEYWORDS[label.code()].choose(&mut rng).expect("nonempty");
                let at = rng.random_range(0..=words.len());
                words.insert(at, kw);
            }
            LabeledPost {
                id: format!("synthetic-{seed}:{i}"),
                text: words.join(" "),
                label,
                split,
            }
        })
        .collect();
    Corpus::new(posts, split)
}
