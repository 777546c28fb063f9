use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CausalCategory, Corpus, CorpusError, Result, NUM_CLASSES};

/// Appends `n` duplicates to each class in `classes`, each drawn uniformly
/// with replacement from that class's original posts.
///
/// The input is always a prefix of the output. Classes are processed in code
/// order regardless of how `classes` is ordered.
pub fn oversample_minority(
    corpus: &Corpus,
    classes: &[CausalCategory],
    n: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut wanted: Vec<CausalCategory> = classes.to_vec();
    wanted.sort();
    wanted.dedup();
    for &c in &wanted {
        if corpus.count(c) == 0 {
            return Err(CorpusError::EmptyClass(c));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = corpus.posts().to_vec();
    for c in wanted {
        let pool: Vec<usize> = corpus
            .posts()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == c)
            .map(|(i, _)| i)
            .collect();
        for _ in 0..n {
            let pick = pool[rng.random_range(0..pool.len())];
            posts.push(corpus.posts()[pick].clone());
        }
    }
    Ok(Corpus::from_parts(posts, corpus.splits()))
}

/// Splits each class so that `round(count * holdout_fraction)` posts (at
/// least one for a nonempty class) go to the holdout side.
///
/// Both outputs keep the input's relative order. Returns `(train, holdout)`.
pub fn stratified_split(
    corpus: &Corpus,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(CorpusError::BadFraction(holdout_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_holdout = vec![false; corpus.len()];
    for code in 0..NUM_CLASSES {
        let mut members: Vec<usize> = corpus
            .posts()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label.code() == code)
            .map(|(i, _)| i)
            .collect();
        let count = members.len();
        if count == 0 {
            continue;
        }
        let holdout = ((count as f64 * holdout_fraction).round() as usize).max(1);
        if holdout >= count {
            return Err(CorpusError::ClassTooSmall {
                class: CausalCategory::from_code(code).expect("code < NUM_CLASSES"),
                count,
                holdout,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..holdout] {
            in_holdout[i] = true;
        }
    }

    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (post, &h) in corpus.posts().iter().zip(&in_holdout) {
        if h {
            held.push(post.clone());
        } else {
            train.push(post.clone());
        }
    }
    Ok((
        Corpus::from_parts(train, corpus.splits()),
        Corpus::from_parts(held, corpus.splits()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledPost, Split};
    use proptest::prelude::*;

    fn corpus_with(counts: &[usize; NUM_CLASSES]) -> Corpus {
        let mut posts = Vec::new();
        for (code, &n) in counts.iter().enumerate() {
            for k in 0..n {
                posts.push(LabeledPost {
                    id: format!("r{code}-{k}"),
                    text: format!("post {k} of class {code}"),
                    label: CausalCategory::from_code(code).unwrap(),
                    split: Split::SdcnlTrain,
                });
            }
        }
        Corpus::new(posts, Split::SdcnlTrain)
    }

    #[test]
    fn adds_exactly_n_per_requested_class() {
        let c = corpus_with(&[50, 100, 30, 20, 80, 60]);
        let classes = [
            CausalCategory::BiasAbuse,
            CausalCategory::JobsCareers,
            CausalCategory::Medication,
        ];
        let out = oversample_minority(&c, &classes, 120, 7).unwrap();
        assert_eq!(out.class_counts(), [50, 220, 150, 140, 80, 60]);
        assert_eq!(&out.posts()[..c.len()], c.posts());
    }

    #[test]
    fn zero_n_is_identity() {
        let c = corpus_with(&[3, 2, 1, 0, 0, 4]);
        let out = oversample_minority(&c, &[CausalCategory::BiasAbuse], 0, 1).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn single_post_class_duplicates_that_post() {
        let c = corpus_with(&[2, 1, 0, 0, 0, 0]);
        let out = oversample_minority(&c, &[CausalCategory::BiasAbuse], 3, 99).unwrap();
        let only = &c.posts()[2];
        assert_eq!(out.len(), 6);
        assert!(out.posts()[3..].iter().all(|p| p == only));
    }

    #[test]
    fn empty_class_cannot_be_oversampled() {
        let c = corpus_with(&[2, 0, 0, 0, 0, 0]);
        assert!(matches!(
            oversample_minority(&c, &[CausalCategory::BiasAbuse], 1, 0),
            Err(CorpusError::EmptyClass(CausalCategory::BiasAbuse))
        ));
    }

    #[test]
    fn oversampling_is_seeded() {
        let c = corpus_with(&[5, 9, 4, 3, 2, 1]);
        let cls = [CausalCategory::Medication, CausalCategory::BiasAbuse];
        let a = oversample_minority(&c, &cls, 10, 3).unwrap();
        let b = oversample_minority(&c, &cls, 10, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_class_hundred_posts_splits_ninety_ten() {
        let c = corpus_with(&[100, 0, 0, 0, 0, 0]);
        let (train, dev) = stratified_split(&c, 0.1, 5).unwrap();
        assert_eq!((train.len(), dev.len()), (90, 10));
    }

    #[test]
    fn per_class_rounding() {
        let c = corpus_with(&[10, 0, 0, 0, 20, 0]);
        let (_, dev) = stratified_split(&c, 0.1, 5).unwrap();
        assert_eq!(dev.class_counts(), [1, 0, 0, 0, 2, 0]);
        // rounding would give zero; minimum of one applies
        let c = corpus_with(&[4, 3, 0, 0, 0, 0]);
        let (_, dev) = stratified_split(&c, 0.1, 5).unwrap();
        assert_eq!(dev.class_counts(), [1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn split_rejects_bad_fraction_and_tiny_classes() {
        let c = corpus_with(&[10, 1, 0, 0, 0, 0]);
        assert!(matches!(
            stratified_split(&c, 0.0, 1),
            Err(CorpusError::BadFraction(_))
        ));
        assert!(matches!(
            stratified_split(&c, 1.0, 1),
            Err(CorpusError::BadFraction(_))
        ));
        assert!(matches!(
            stratified_split(&c, 0.2, 1),
            Err(CorpusError::ClassTooSmall { count: 1, .. })
        ));
    }

    #[test]
    fn split_is_seeded() {
        let c = corpus_with(&[30, 12, 7, 9, 40, 3]);
        assert_eq!(
            stratified_split(&c, 0.25, 11).unwrap(),
            stratified_split(&c, 0.25, 11).unwrap()
        );
    }

    proptest! {
        #[test]
        fn oversample_adds_n_and_keeps_prefix(
            counts in prop::array::uniform6(1usize..15),
            mask in prop::array::uniform6(any::<bool>()),
            n in 0usize..20,
            seed in any::<u64>(),
        ) {
            let c = corpus_with(&counts);
            let classes: Vec<_> = CausalCategory::ALL.into_iter().filter(|k| mask[k.code()]).collect();
            let out = oversample_minority(&c, &classes, n, seed).unwrap();
            prop_assert_eq!(&out.posts()[..c.len()], c.posts());
            for k in CausalCategory::ALL {
                let added = out.count(k) - c.count(k);
                prop_assert_eq!(added, if mask[k.code()] { n } else { 0 });
            }
            // every appended post copies an existing post of its class
            for p in &out.posts()[c.len()..] {
                prop_assert!(c.posts().contains(p));
            }
        }

        #[test]
        fn split_partitions_input(
            counts in prop::array::uniform6(2usize..25),
            frac in 0.05f64..0.45,
            seed in any::<u64>(),
        ) {
            let c = corpus_with(&counts);
            let (a, b) = stratified_split(&c, frac, seed).unwrap();
            let mut ids: Vec<_> = a.posts().iter().chain(b.posts()).map(|p| p.id.clone()).collect();
            let mut orig: Vec<_> = c.posts().iter().map(|p| p.id.clone()).collect();
            ids.sort();
            orig.sort();
            prop_assert_eq!(ids, orig);
            for k in 0..NUM_CLASSES {
                let expect = ((counts[k] as f64 * frac).round() as usize).max(1);
                prop_assert_eq!(b.class_counts()[k], expect);
            }
        }
    }
}
