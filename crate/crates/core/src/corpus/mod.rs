//! Labeled post corpora: the six causal categories, CSV ingestion with
//! row-level validation, canonical export, rebalancing and splitting.

mod balance;
pub mod synthetic;

pub use balance::{oversample_minority, stratified_split};

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of causal categories.
pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header has no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, row {row}: label `{value}` is not a causal category")]
    BadLabel {
        path: PathBuf,
        row: u64,
        value: String,
    },
    #[error("{path}, row {row}: text is empty")]
    EmptyText { path: PathBuf, row: u64 },
    #[error("invalid column map: {0}")]
    InvalidColumnMap(String),
    #[error("cannot oversample {0}: it has no posts")]
    EmptyClass(CausalCategory),
    #[error("holdout fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error(
        "class {class} has {count} post(s); a holdout of {holdout} would leave none for training"
    )]
    ClassTooSmall {
        class: CausalCategory,
        count: usize,
        holdout: usize,
    },
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The reason a post gives for the author's distress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalCategory {
    NoReason,
    BiasAbuse,
    JobsCareers,
    Medication,
    Relationship,
    Alienation,
}

impl CausalCategory {
    pub const ALL: [CausalCategory; NUM_CLASSES] = [
        CausalCategory::NoReason,
        CausalCategory::BiasAbuse,
        CausalCategory::JobsCareers,
        CausalCategory::Medication,
        CausalCategory::Relationship,
        CausalCategory::Alienation,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CausalCategory::NoReason => "no_reason",
            CausalCategory::BiasAbuse => "bias_abuse",
            CausalCategory::JobsCareers => "jobs_careers",
            CausalCategory::Medication => "medication",
            CausalCategory::Relationship => "relationship",
            CausalCategory::Alienation => "alienation",
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Parses `3`, `c3`, or `medication`.
    pub fn parse(value: &str) -> Option<Self> {
        let v = value.trim();
        if let Ok(code) = v.parse::<usize>() {
            return Self::from_code(code);
        }
        if let Some(code) = v
            .strip_prefix(['c', 'C'])
            .and_then(|d| d.parse::<usize>().ok())
        {
            return Self::from_code(code);
        }
        Self::from_name(&v.to_ascii_lowercase())
    }
}

impl fmt::Display for CausalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which CAMS file a post came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Crawled,
    SdcnlTrain,
    SdcnlTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Crawled, Split::SdcnlTrain, Split::SdcnlTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Crawled => "crawled",
            Split::SdcnlTrain => "sdcnl_train",
            Split::SdcnlTest => "sdcnl_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| CorpusError::UnknownSplit(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPost {
    /// Row provenance, e.g. `crawled.csv:17`.
    pub id: String,
    pub text: String,
    pub label: CausalCategory,
    pub split: Split,
}

/// An ordered, immutable collection of labeled posts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    posts: Vec<LabeledPost>,
    splits: Vec<Split>,
    class_counts: [usize; NUM_CLASSES],
}

impl Corpus {
    /// Builds a corpus whose source is `split`. Posts keep their own split tag.
    pub fn new(posts: Vec<LabeledPost>, split: Split) -> Self {
        Self::with_splits(posts, vec![split])
    }

    fn with_splits(posts: Vec<LabeledPost>, mut splits: Vec<Split>) -> Self {
        splits.dedup();
        let class_counts = count_classes(&posts);
        Corpus {
            posts,
            splits,
            class_counts,
        }
    }

    /// Concatenates corpora in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Corpus {
        let mut posts = Vec::new();
        let mut splits: Vec<Split> = Vec::new();
        for part in parts {
            posts.extend(part.posts.iter().cloned());
            for s in &part.splits {
                if !splits.contains(s) {
                    splits.push(*s);
                }
            }
        }
        Corpus::with_splits(posts, splits)
    }

    pub fn posts(&self) -> &[LabeledPost] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// The split this corpus was loaded from, or `None` for a concatenation.
    pub fn source_split(&self) -> Option<Split> {
        match self.splits.as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn count(&self, class: CausalCategory) -> usize {
        self.class_counts[class.code()]
    }

    pub fn texts(&self) -> Vec<&str> {
        self.posts.iter().map(|p| p.text.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<CausalCategory> {
        self.posts.iter().map(|p| p.label).collect()
    }

    /// Label of the most frequent class (lowest code on ties).
    pub fn majority_class(&self) -> Option<CausalCategory> {
        if self.is_empty() {
            return None;
        }
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.class_counts[c] > self.class_counts[best] {
                best = c;
            }
        }
        CausalCategory::from_code(best)
    }

    pub(crate) fn from_parts(posts: Vec<LabeledPost>, splits: &[Split]) -> Self {
        Corpus::with_splits(posts, splits.to_vec())
    }
}

fn count_classes(posts: &[LabeledPost]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for p in posts {
        counts[p.label.code()] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    IntegerCodes,
    CategoryNames,
}

/// Which CSV columns hold the text, label and (optionally) row id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub text_column: String,
    pub label_column: String,
    pub label_encoding: LabelEncoding,
    pub id_column: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            text_column: "text".into(),
            label_column: "cause".into(),
            label_encoding: LabelEncoding::IntegerCodes,
            id_column: None,
        }
    }
}

impl ColumnMap {
    /// The layout written by [`save_corpus`].
    pub fn canonical() -> Self {
        ColumnMap {
            text_column: "text".into(),
            label_column: "label_code".into(),
            label_encoding: LabelEncoding::IntegerCodes,
            id_column: Some("id".into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_column == self.label_column {
            return Err(CorpusError::InvalidColumnMap(format!(
                "text and label both map to `{}`",
                self.text_column
            )));
        }
        Ok(())
    }

    fn decode_label(&self, raw: &str) -> Option<CausalCategory> {
        let v = raw.trim();
        match self.label_encoding {
            LabelEncoding::IntegerCodes => {
                // tolerate "3.0" as written by some spreadsheet exports
                let code = v.parse::<usize>().ok().or_else(|| match v.parse::<f64>() {
                    Ok(f) if f.fract() == 0.0 && f >= 0.0 => Some(f as usize),
                    _ => None,
                })?;
                CausalCategory::from_code(code)
            }
            LabelEncoding::CategoryNames => CausalCategory::from_name(&v.to_ascii_lowercase()),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        .ok_or_else(|| CorpusError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

/// Reads a comma-separated file with a header row into a corpus.
///
/// Row numbers in errors count data rows from 1 (the header is row 0).
pub fn load_corpus(path: &Path, columns: &ColumnMap, split: Split) -> Result<Corpus> {
    columns.validate()?;
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_from_reader(file, path, columns, split)
}

pub(crate) fn load_from_reader<R: Read>(
    reader: R,
    path: &Path,
    columns: &ColumnMap,
    split: Split,
) -> Result<Corpus> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let text_idx = column_index(&headers, &columns.text_column, path)?;
    let label_idx = column_index(&headers, &columns.label_column, path)?;
    let id_idx = match &columns.id_column {
        Some(name) => Some(column_index(&headers, name, path)?),
        None => None,
    };
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| split.name().to_string());

    let mut posts = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i as u64 + 1;
        let text = record.get(text_idx).unwrap_or("");
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                path: path.to_path_buf(),
                row,
            });
        }
        let raw_label = record.get(label_idx).unwrap_or("");
        let label = columns
            .decode_label(raw_label)
            .ok_or_else(|| CorpusError::BadLabel {
                path: path.to_path_buf(),
                row,
                value: raw_label.to_string(),
            })?;
        let id = match id_idx.and_then(|k| record.get(k)) {
            Some(id) => id.to_string(),
            None => format!("{stem}:{row}"),
        };
        posts.push(LabeledPost {
            id,
            text: text.to_string(),
            label,
            split,
        });
    }
    Ok(Corpus::new(posts, split))
}

/// Writes the canonical `id,text,label_code,split` CSV.
pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "text", "label_code", "split"])?;
    for p in corpus.posts() {
        w.write_record([
            p.id.as_str(),
            p.text.as_str(),
            &p.label.code().to_string(),
            p.split.name(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_corpus(corpus, file).map_err(|source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Hex SHA-256 of a file's bytes, recorded in manifests to detect dataset drift.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(data: &str, columns: &ColumnMap) -> Result<Corpus> {
        load_from_reader(
            data.as_bytes(),
            Path::new("fixture.csv"),
            columns,
            Split::Crawled,
        )
    }

    #[test]
    fn category_codes_and_names_are_a_bijection() {
        for (i, c) in CausalCategory::ALL.iter().enumerate() {
            assert_eq!(c.code(), i);
            assert_eq!(CausalCategory::from_code(i), Some(*c));
            assert_eq!(CausalCategory::from_name(c.name()), Some(*c));
        }
        assert_eq!(CausalCategory::from_code(6), None);
        assert_eq!(
            CausalCategory::parse("c2"),
            Some(CausalCategory::JobsCareers)
        );
        assert_eq!(
            CausalCategory::parse("Medication"),
            Some(CausalCategory::Medication)
        );
    }

    #[test]
    fn header_only_file_gives_empty_corpus() {
        let c = load_str("text,cause\n", &ColumnMap::default()).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.class_counts(), [0; 6]);
    }

    #[test]
    fn three_row_fixture_counts() {
        let data = "text,cause\nfeeling low,0\nshe left me,4\n\"we broke up, again\",4\n";
        let c = load_str(data, &ColumnMap::default()).unwrap();
        assert_eq!(c.class_counts(), [1, 0, 0, 0, 2, 0]);
        assert_eq!(c.posts()[2].text, "we broke up, again");
        assert_eq!(c.posts()[0].id, "fixture.csv:1");
    }

    #[test]
    fn bad_label_names_row() {
        let data = "text,cause\nok,1\nbad,7\n";
        match load_str(data, &ColumnMap::default()) {
            Err(CorpusError::BadLabel { row, value, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "7");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_text_names_row() {
        let data = "text,cause\nok,1\n   ,2\n";
        assert!(matches!(
            load_str(data, &ColumnMap::default()),
            Err(CorpusError::EmptyText { row: 2, .. })
        ));
    }

    #[test]
    fn missing_column_is_reported() {
        let err = load_str("body,cause\nx,1\n", &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { ref column, .. } if column == "text"));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_corpus(
            Path::new("/nonexistent/cams.csv"),
            &ColumnMap::default(),
            Split::Crawled,
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cams.csv"));
    }

    #[test]
    fn name_encoded_labels() {
        let map = ColumnMap {
            label_encoding: LabelEncoding::CategoryNames,
            ..ColumnMap::default()
        };
        let c = load_str("text,cause\na,alienation\nb,Jobs_Careers\n", &map).unwrap();
        assert_eq!(
            c.labels(),
            vec![CausalCategory::Alienation, CausalCategory::JobsCareers]
        );
        assert!(load_str("text,cause\na,3\n", &map).is_err());
    }

    #[test]
    fn identical_text_and_label_columns_rejected() {
        let map = ColumnMap {
            label_column: "text".into(),
            ..ColumnMap::default()
        };
        assert!(matches!(
            map.validate(),
            Err(CorpusError::InvalidColumnMap(_))
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let data = "text,cause\n\"multi\nline, post\",3\nplain,5\nplain,5\n";
        let c = load_str(data, &ColumnMap::default()).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let back = load_from_reader(
            buf.as_slice(),
            Path::new("fixture.csv"),
            &ColumnMap::canonical(),
            Split::Crawled,
        )
        .unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn concat_tracks_sources() {
        let a = load_str("text,cause\na,0\n", &ColumnMap::default()).unwrap();
        let b = load_from_reader(
            "text,cause\nb,1\n".as_bytes(),
            Path::new("t.csv"),
            &ColumnMap::default(),
            Split::SdcnlTrain,
        )
        .unwrap();
        let both = Corpus::concat([&a, &b]);
        assert_eq!(both.len(), 2);
        assert_eq!(both.source_split(), None);
        assert_eq!(both.splits(), &[Split::Crawled, Split::SdcnlTrain]);
        assert_eq!(a.source_split(), Some(Split::Crawled));
    }
}
