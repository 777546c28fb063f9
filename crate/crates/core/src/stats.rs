//! Per-class, per-split word-length statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CausalCategory, Corpus, Split};
use crate::textprep::{clean_with, raw_word_count, whitespace_tokens, CleanConfig};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("cannot compute length statistics of an empty corpus")]
    EmptyCorpus,
    #[error("unknown report format `{0}` (expected text, csv or json)")]
    UnknownFormat(String),
}

/// What a "word" is when counting post lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBasis {
    /// Whitespace tokens of the cleaned text.
    #[default]
    Cleaned,
    /// Whitespace tokens of the text as stored in the file.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub class: CausalCategory,
    pub split: Split,
    pub min: usize,
    pub max: usize,
    pub avg: f64,
    pub n_posts: usize,
}

fn word_count(text: &str, basis: CountBasis, clean_cfg: &CleanConfig) -> usize {
    match basis {
        CountBasis::Cleaned => whitespace_tokens(&clean_with(text, clean_cfg)).len(),
        CountBasis::Raw => raw_word_count(text),
    }
}

/// Min/max/mean word counts for every (split, class) present in `corpus`.
pub fn length_stats(corpus: &Corpus, basis: CountBasis) -> Result<Vec<LengthStats>, StatsError> {
    length_stats_with(corpus, basis, &CleanConfig::default())
}

pub fn length_stats_with(
    corpus: &Corpus,
    basis: CountBasis,
    clean_cfg: &CleanConfig,
) -> Result<Vec<LengthStats>, StatsError> {
    if corpus.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let mut groups: BTreeMap<(Split, CausalCategory), Vec<usize>> = BTreeMap::new();
    for post in corpus.posts() {
        groups
            .entry((post.split, post.label))
            .or_default()
            .push(word_count(&post.text, basis, clean_cfg));
    }
    Ok(groups
        .into_iter()
        .map(|((split, class), counts)| {
            let total: usize = counts.iter().sum();
            LengthStats {
                class,
                split,
                min: *counts.iter().min().expect("group is nonempty"),
                max: *counts.iter().max().expect("group is nonempty"),
                avg: total as f64 / counts.len() as f64,
                n_posts: counts.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsFormat {
    Text,
    Csv,
    Json,
}

impl StatsFormat {
    pub const ALL: [StatsFormat; 3] = [StatsFormat::Text, StatsFormat::Csv, StatsFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            StatsFormat::Text => "txt",
            StatsFormat::Csv => "csv",
            StatsFormat::Json => "json",
        }
    }
}

impl FromStr for StatsFormat {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, StatsError> {
        match s {
            "text" | "txt" => Ok(StatsFormat::Text),
            "csv" => Ok(StatsFormat::Csv),
            "json" => Ok(StatsFormat::Json),
            other => Err(StatsError::UnknownFormat(other.to_string())),
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Serialize)]
struct JsonRow<'a> {
    split: &'a str,
    class_code: usize,
    class_name: &'a str,
    min: usize,
    max: usize,
    avg: f64,
    n_posts: usize,
}

/// Renders rows ordered by (split, class code), averages to two decimals.
pub fn emit_stats_table(stats: &[LengthStats], format: StatsFormat) -> String {
    let mut rows: Vec<&LengthStats> = stats.iter().collect();
    rows.sort_by_key(|r| (r.split, r.class));
    let mut out = String::new();
    match format {
        StatsFormat::Csv => {
            out.push_str("split,class_code,class_name,min,max,avg,n_posts\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{:.2},{}",
                    r.split,
                    r.class.code(),
                    r.class.name(),
                    r.min,
                    r.max,
                    r.avg,
                    r.n_posts
                );
            }
        }
        StatsFormat::Json => {
            let json: Vec<JsonRow> = rows
                .iter()
                .map(|r| JsonRow {
                    split: r.split.name(),
                    class_code: r.class.code(),
                    class_name: r.class.name(),
                    min: r.min,
                    max: r.max,
                    avg: round2(r.avg),
                    n_posts: r.n_posts,
                })
                .collect();
            out = serde_json::to_string_pretty(&json).expect("rows serialize");
            out.push('\n');
        }
        StatsFormat::Text => {
            let _ = writeln!(
                out,
                "{:<12} {:<14} {:>6} {:>6} {:>8} {:>7}",
                "split", "class", "min", "max", "avg", "posts"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<12} {:<14} {:>6} {:>6} {:>8.2} {:>7}",
                    r.split.name(),
                    r.class.name(),
                    r.min,
                    r.max,
                    r.avg,
                    r.n_posts
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledPost;

    fn post(text: &str, label: CausalCategory) -> LabeledPost {
        LabeledPost {
            id: String::new(),
            text: text.into(),
            label,
            split: Split::Crawled,
        }
    }

    #[test]
    fn single_post_class() {
        let c = Corpus::new(
            vec![post(
                "one two three four five six seven",
                CausalCategory::Medication,
            )],
            Split::Crawled,
        );
        let s = length_stats(&c, CountBasis::Cleaned).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].min, s[0].max, s[0].avg), (7, 7, 7.0));
    }

    #[test]
    fn two_posts_average() {
        let c = Corpus::new(
            vec![
                post("a b c d", CausalCategory::NoReason),
                post("a b c d e f g h i j", CausalCategory::NoReason),
                post("x", CausalCategory::Alienation),
            ],
            Split::Crawled,
        );
        let s = length_stats(&c, CountBasis::Cleaned).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].min, s[0].max, s[0].avg), (4, 10, 7.0));
        assert_eq!(s.iter().map(|r| r.n_posts).sum::<usize>(), c.len());
    }

    #[test]
    fn raw_and_cleaned_bases_differ_on_urls_only_by_content() {
        let c = Corpus::new(
            vec![post("go  to http://a.b now", CausalCategory::NoReason)],
            Split::Crawled,
        );
        assert_eq!(length_stats(&c, CountBasis::Raw).unwrap()[0].max, 4);
        assert_eq!(length_stats(&c, CountBasis::Cleaned).unwrap()[0].max, 4);
    }

    #[test]
    fn empty_corpus_is_error() {
        let c = Corpus::new(vec![], Split::Crawled);
        assert!(matches!(
            length_stats(&c, CountBasis::Cleaned),
            Err(StatsError::EmptyCorpus)
        ));
    }

    #[test]
    fn csv_rendering() {
        let row = LengthStats {
            class: CausalCategory::NoReason,
            split: Split::Crawled,
            min: 1,
            max: 508,
            avg: 59.7849,
            n_posts: 10,
        };
        let csv = emit_stats_table(&[row], StatsFormat::Csv);
        assert_eq!(
            csv,
            "split,class_code,class_name,min,max,avg,n_posts\ncrawled,0,no_reason,1,508,59.78,10\n"
        );
        assert_eq!(
            emit_stats_table(&[], StatsFormat::Csv),
            "split,class_code,class_name,min,max,avg,n_posts\n"
        );
        assert_eq!(emit_stats_table(&[], StatsFormat::Text).lines().count(), 1);
        assert_eq!(emit_stats_table(&[], StatsFormat::Json).trim(), "[]");
    }

    #[test]
    fn rows_sorted_and_json_rounded() {
        let mk = |split, class, avg| LengthStats {
            class,
            split,
            min: 1,
            max: 3,
            avg,
            n_posts: 3,
        };
        let rows = vec![
            mk(Split::SdcnlTest, CausalCategory::NoReason, 2.0),
            mk(Split::Crawled, CausalCategory::Alienation, 1.666666),
            mk(Split::Crawled, CausalCategory::BiasAbuse, 2.5),
        ];
        let text = emit_stats_table(&rows, StatsFormat::Text);
        let lines: Vec<_> = text.lines().skip(1).collect();
        assert!(lines[0].contains("bias_abuse"));
        assert!(lines[1].contains("alienation") && lines[1].contains("1.67"));
        assert!(lines[2].starts_with("sdcnl_test"));
        let json: serde_json::Value =
            serde_json::from_str(&emit_stats_table(&rows, StatsFormat::Json)).unwrap();
        assert_eq!(json[1]["avg"], serde_json::json!(1.67));
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "xml".parse::<StatsFormat>(),
            Err(StatsError::UnknownFormat(_))
        ));
    }
}
