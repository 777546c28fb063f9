//! Length and mask contract of fixed-length subword encodings.

use std::path::PathBuf;

use causalcat::textprep::{clean, encode_subword, SubwordError, SubwordTokenizer};
use proptest::prelude::*;

const MAX_LEN: usize = 256;

fn tokenizer(name: &str) -> (SubwordTokenizer, String) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/encoders")
        .join(name);
    let ckpt = dir.to_str().unwrap().to_string();
    let pad = match name {
        "roberta" => 1,
        "xlnet" => 5,
        _ => 0,
    };
    (
        SubwordTokenizer::from_file(&dir.join("tokenizer.json"), &ckpt, Some(pad)).unwrap(),
        ckpt,
    )
}

const WORDS: &[&str] = &[
    "I",
    "lost",
    "my",
    "job",
    "and",
    "girlfriend",
    "left",
    "me",
    "Pills",
    "make",
    "tired",
    "boss",
    "fired",
    "The",
    "new",
    "medication",
    "!",
    "?",
    "alone",
    "zzqx",
];

#[test]
fn long_input_is_truncated_to_max_len() {
    for name in ["bert", "distilbert", "roberta", "xlnet"] {
        let (tok, ckpt) = tokenizer(name);
        let text = ["I lost my job and my girlfriend left me."; 40].join(" ");
        let pieces = tok.piece_ids(&text).unwrap().len();
        assert!(pieces >= 300, "{name}: only {pieces} pieces");
        let e = encode_subword(&clean(&text), &tok, &ckpt, MAX_LEN).unwrap();
        assert_eq!(e.len(), MAX_LEN);
        assert_eq!(e.real_len(), MAX_LEN, "{name}");
        assert!(e.is_well_formed(MAX_LEN, tok.pad_id()));
    }
}

#[test]
fn ten_pieces_give_twelve_real_positions() {
    let (tok, ckpt) = tokenizer("bert");
    let text = "The new medication";
    assert_eq!(tok.piece_ids(text).unwrap().len(), 10);
    let e = encode_subword(&clean(text), &tok, &ckpt, MAX_LEN).unwrap();
    assert_eq!(e.mask.iter().map(|&m| usize::from(m)).sum::<usize>(), 12);
}

#[test]
fn empty_text_still_has_markers() {
    let (tok, ckpt) = tokenizer("roberta");
    let e = encode_subword(&clean(""), &tok, &ckpt, MAX_LEN).unwrap();
    assert_eq!(e.real_len(), tok.special_tokens());
    assert!(e.is_well_formed(MAX_LEN, tok.pad_id()));
}

#[test]
fn max_len_must_exceed_marker_count() {
    let (tok, ckpt) = tokenizer("bert");
    assert!(matches!(
        encode_subword(&clean("hi"), &tok, &ckpt, 2),
        Err(SubwordError::MaxLenTooSmall { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_encoding_is_well_formed(
        idx in prop::collection::vec(0..WORDS.len(), 0..400),
        family in 0usize..4,
        max_len in prop_oneof![Just(MAX_LEN), 8usize..64],
    ) {
        let name = ["bert", "distilbert", "roberta", "xlnet"][family];
        let (tok, ckpt) = tokenizer(name);
        let text: Vec<&str> = idx.iter().map(|&i| WORDS[i]).collect();
        let e = encode_subword(&clean(&text.join(" ")), &tok, &ckpt, max_len).unwrap();
        prop_assert_eq!(e.len(), max_len);
        prop_assert!(e.is_well_formed(max_len, tok.pad_id()));
        let pieces = tok.piece_ids(&clean(&text.join(" ")).into_string()).unwrap().len();
        prop_assert_eq!(e.real_len(), (pieces + tok.special_tokens()).min(max_len));
    }
}
