//! End-to-end commands over a resolved [`RunConfig`]: corpus statistics,
//! training, evaluation, report comparison and prediction.

mod config;

pub use config::{
    flatten, parse_override, BalanceSpec, CompareMode, ConfigError, DataConfig, EvalConfig,
    ModelConfig, NamedFlags, RunConfig, StatsConfig, TrainComposition,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::baselines::{train_cnn_lstm, train_logreg, BaselineError, TfidfFeaturizer};
use crate::classifier::{ClassifierError, Prediction, TrainedClassifier, CNN_LSTM, LOGREG};
use crate::corpus::{
    file_digest, load_corpus, oversample_minority, stratified_split, Corpus, CorpusError, Split,
    NUM_CLASSES,
};
use crate::eval::{
    bootstrap_test, error_analysis, render_confusion, render_table, significance_test, EvalError,
    EvalReport, SignificanceResult, TestSplitId,
};
use crate::finetune::{fine_tune, load_backend, BackendRegistry, FineTuneError, LocalFetcher};
use crate::manifest::{Manifest, ManifestError, MANIFEST_FILE};
use crate::stats::{emit_stats_table, length_stats_with, StatsError, StatsFormat};

/// Written next to the checkpoint; `train --config` on it reruns the run.
pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_TEXT: &str = "comparison.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    FineTune(#[from] FineTuneError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 usage or config error, 2 data error, 3 training abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Usage(_) => 1,
            PipelineError::Baseline(e) => baseline_code(e),
            PipelineError::FineTune(e) => finetune_code(e),
            PipelineError::Classifier(ClassifierError::EmptyInput) => 1,
            PipelineError::Classifier(ClassifierError::Baseline(e)) => baseline_code(e),
            PipelineError::Classifier(ClassifierError::FineTune(e)) => finetune_code(e),
            _ => 2,
        }
    }
}

fn baseline_code(e: &BaselineError) -> i32 {
    match e {
        BaselineError::InvalidConfig(_) => 1,
        BaselineError::Diverged(..) | BaselineError::Tensor(_) => 3,
        _ => 2,
    }
}

fn finetune_code(e: &FineTuneError) -> i32 {
    match e {
        FineTuneError::UnknownBackend { .. } | FineTuneError::InvalidConfig(_) => 1,
        FineTuneError::Diverged { .. } | FineTuneError::Tensor(_) => 3,
        _ => 2,
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A loaded split with the content digest of its file.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub split: Split,
    pub path: PathBuf,
    pub digest: String,
    pub corpus: Corpus,
}

fn split_key(split: Split) -> String {
    format!("data.{}", split.name())
}

/// Loads `split` from its configured path.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<LoadedSplit> {
    let path = cfg
        .data
        .path(split)
        .ok_or_else(|| ConfigError::Invalid(format!("{} is not set", split_key(split))))?;
    load_split_from(cfg, split, path)
}

fn load_split_from(cfg: &RunConfig, split: Split, path: &Path) -> Result<LoadedSplit> {
    let corpus = load_corpus(path, &cfg.data.columns, split)?;
    Ok(LoadedSplit {
        split,
        path: path.to_path_buf(),
        digest: file_digest(path)?,
        corpus,
    })
}

#[derive(Debug)]
pub struct StatsOutcome {
    /// Text tables in split order.
    pub tables: Vec<(Split, String)>,
    pub files: Vec<PathBuf>,
}

/// Writes `stats_<split>.{txt,csv,json}` for every configured split.
pub fn run_stats(cfg: &RunConfig) -> Result<StatsOutcome> {
    let splits: Vec<Split> = Split::ALL
        .into_iter()
        .filter(|s| cfg.data.path(*s).is_some())
        .collect();
    if splits.is_empty() {
        return Err(ConfigError::Invalid(
            "no dataset path is set (data.crawled, data.sdcnl_train, data.sdcnl_test)".into(),
        )
        .into());
    }
    let mut outcome = StatsOutcome {
        tables: Vec::new(),
        files: Vec::new(),
    };
    for split in splits {
        let loaded = load_split(cfg, split)?;
        let stats = length_stats_with(&loaded.corpus, cfg.stats.basis, &cfg.stats.clean)?;
        for format in StatsFormat::ALL {
            let path = cfg
                .out
                .join(format!("stats_{}.{}", split.name(), format.extension()));
            let rendered = emit_stats_table(&stats, format);
            write_file(&path, &rendered)?;
            if format == StatsFormat::Text {
                outcome.tables.push((split, rendered));
            }
            outcome.files.push(path);
        }
    }
    Ok(outcome)
}

fn manifest_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn counts_string(counts: [usize; NUM_CLASSES]) -> String {
    counts
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// The training and dev corpora a run uses, and what went into them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub sources: Vec<LoadedSplit>,
    pub train: Corpus,
    pub dev: Corpus,
    pub balance: BalanceSpec,
}

/// Composes the training corpus, holds out a stratified dev set, then
/// oversamples the remaining training posts. Dev posts are never duplicated.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let sources = cfg
        .data
        .train_composition
        .splits()
        .iter()
        .map(|&s| load_split(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let composed = Corpus::concat(sources.iter().map(|l| &l.corpus));
    let (train, dev) = stratified_split(&composed, cfg.data.dev_fraction, cfg.seed)?;
    let balance = cfg.balance_spec()?;
    let train = if balance.is_noop() {
        train
    } else {
        oversample_minority(&train, &balance.classes, balance.n, cfg.seed)?
    };
    Ok(PreparedData {
        sources,
        train,
        dev,
        balance,
    })
}

/// Trains the configured model on prepared data.
pub fn train_model(cfg: &RunConfig, data: &PreparedData) -> Result<TrainedClassifier> {
    Ok(match cfg.model.name.as_str() {
        LOGREG => {
            let f = TfidfFeaturizer::fit(
                &data.train,
                cfg.logreg.min_frequency,
                cfg.logreg.sublinear_tf,
            )?;
            TrainedClassifier::LogReg(train_logreg(&data.train, &data.dev, f, &cfg.logreg)?)
        }
        CNN_LSTM => {
            TrainedClassifier::CnnLstm(train_cnn_lstm(&data.train, &data.dev, &cfg.cnn_lstm)?)
        }
        backend_id => {
            let backend = load_backend(
                &BackendRegistry::default(),
                &LocalFetcher::from_env(),
                backend_id,
                cfg.model.checkpoint.as_deref(),
            )?;
            TrainedClassifier::Encoder(fine_tune(&backend, &data.train, &data.dev, &cfg.finetune)?)
        }
    })
}

/// Everything needed to rerun: the effective config, seed and input digests.
/// The output directory is omitted so reruns elsewhere compare equal.
pub fn run_manifest(cfg: &RunConfig, data: &PreparedData) -> Manifest {
    let mut m = Manifest::new();
    m.set("created_at", chrono::Utc::now().to_rfc3339())
        .set("tool_version", env!("CARGO_PKG_VERSION"))
        .set("model", &cfg.model.name)
        .set("seed", cfg.seed)
        .set("balance", &data.balance);
    for src in &data.sources {
        let key = split_key(src.split);
        m.set(&format!("{key}.sha256"), &src.digest)
            .set(&format!("{key}.posts"), src.corpus.len());
    }
    m.set("train.posts", data.train.len())
        .set(
            "train.class_counts",
            counts_string(data.train.class_counts()),
        )
        .set("dev.posts", data.dev.len())
        .set("dev.class_counts", counts_string(data.dev.class_counts()));
    for (k, v) in cfg.flattened() {
        if k != "out" {
            m.set(&format!("config.{k}"), manifest_value(&v));
        }
    }
    m
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub manifest: Manifest,
    pub classifier: TrainedClassifier,
}

/// Trains and writes the checkpoint, manifest, dev curve and effective
/// config into `cfg.out`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare_data(cfg)?;
    let classifier = train_model(cfg, &data)?;
    let manifest = classifier.save(&cfg.out, &run_manifest(cfg, &data))?;
    write_file(&cfg.out.join(RUN_CONFIG_FILE), &cfg.to_toml())?;
    Ok(TrainOutcome {
        checkpoint: cfg.out.clone(),
        manifest,
        classifier,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub text: String,
    pub files: Vec<PathBuf>,
}

/// Evaluates a checkpoint on `test` (or the configured test split) and
/// writes `report.json` and `report.txt` into `cfg.out`.
pub fn run_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    test: Option<&Path>,
) -> Result<EvalOutcome> {
    let (classifier, manifest) = TrainedClassifier::load(checkpoint)?;
    let loaded = match test {
        Some(path) => load_split_from(cfg, Split::SdcnlTest, path)?,
        None => load_split(cfg, Split::SdcnlTest)?,
    };
    if loaded.corpus.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let preds = classifier.predict(&loaded.corpus.texts())?;
    let gold: Vec<usize> = loaded.corpus.labels().iter().map(|c| c.code()).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.class.code()).collect();
    let manifest_ref = format!(
        "{}#{}",
        checkpoint.join(MANIFEST_FILE).display(),
        manifest.require("weights_sha256")?
    );
    let split_id = TestSplitId {
        name: Split::SdcnlTest.name().into(),
        digest: loaded.digest.clone(),
        n: loaded.corpus.len(),
    };
    let seed = manifest.get("seed").and_then(|s| s.parse().ok());
    let report = EvalReport::new(classifier.kind(), &manifest_ref, seed, split_id, gold, pred)?;

    let mut text = render_table(&[&report]);
    let _ = write!(
        text,
        "\nmacro F1 {:.4} over {} posts\n\nconfusion\n{}\n{}",
        report.macro_f1,
        report.n,
        render_confusion(&report.confusion),
        error_analysis(&report, cfg.eval.top_k).render()
    );
    let json_path = cfg.out.join(REPORT_JSON);
    let text_path = cfg.out.join(REPORT_TEXT);
    write_file(&json_path, &report.to_json())?;
    write_file(&text_path, &text)?;
    Ok(EvalOutcome {
        report,
        text,
        files: vec![json_path, text_path],
    })
}

/// One significance test between two report groups.
#[derive(Debug, Clone, Serialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub result: SignificanceResult,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub pairs: Vec<PairwiseResult>,
    pub text: String,
    pub files: Vec<PathBuf>,
}

fn label(group: &[EvalReport]) -> String {
    group[0].model.clone()
}

fn compare_pair(cfg: &RunConfig, a: &[EvalReport], b: &[EvalReport]) -> Result<SignificanceResult> {
    let mode = match cfg.eval.mode {
        CompareMode::Auto if a.len() >= 2 && b.len() >= 2 => CompareMode::Paired,
        CompareMode::Auto => CompareMode::Bootstrap,
        m => m,
    };
    let accuracies = |g: &[EvalReport]| g.iter().map(|r| r.accuracy).collect::<Vec<_>>();
    Ok(match mode {
        CompareMode::Bootstrap => bootstrap_test(
            &a[0].gold,
            &a[0].pred,
            &b[0].pred,
            cfg.eval.bootstrap_resamples,
            cfg.seed,
            cfg.eval.alpha,
        )?,
        CompareMode::Paired => {
            if a.len() != b.len() {
                return Err(EvalError::LengthMismatch {
                    golds: a.len(),
                    preds: b.len(),
                }
                .into());
            }
            // Pair runs by seed.
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_by_key(|r| r.seed);
            b.sort_by_key(|r| r.seed);
            significance_test(&accuracies(&a), &accuracies(&b), cfg.eval.alpha, true)?
        }
        _ => significance_test(&accuracies(a), &accuracies(b), cfg.eval.alpha, false)?,
    })
}

/// Compares groups of reports. Each group holds the runs of one model; every
/// report must come from the same test split.
pub fn run_compare(cfg: &RunConfig, groups: &[Vec<PathBuf>]) -> Result<CompareOutcome> {
    if groups.len() < 2 || groups.iter().any(Vec::is_empty) {
        return Err(PipelineError::Usage(
            "compare needs at least two nonempty report groups".into(),
        ));
    }
    let groups: Vec<Vec<EvalReport>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|p| EvalReport::load(p))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()?;
    let reference = &groups[0][0].test_split;
    for r in groups.iter().flatten() {
        if &r.test_split != reference {
            return Err(EvalError::SplitMismatch(
                format!(
                    "{} ({}, n={})",
                    reference.name, reference.digest, reference.n
                ),
                format!(
                    "{} ({}, n={})",
                    r.test_split.name, r.test_split.digest, r.test_split.n
                ),
            )
            .into());
        }
    }

    let all: Vec<&EvalReport> = groups.iter().flatten().collect();
    let mut text = render_table(&all);
    text.push_str("\nmean accuracy per group\n");
    for g in &groups {
        let mean = g.iter().map(|r| r.accuracy).sum::<f64>() / g.len() as f64;
        let _ = writeln!(
            text,
            "  {:<20} {:.4} over {} run(s)",
            label(g),
            mean,
            g.len()
        );
    }
    text.push_str("\nsignificance\n");
    let mut pairs = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let result = compare_pair(cfg, &groups[i], &groups[j])?;
            let _ = writeln!(
                text,
                "  {} vs {}: diff {:+.4}, t {:.4}, p {:.4}, significant at {}: {}{}\n    ({})",
                label(&groups[i]),
                label(&groups[j]),
                result.mean_difference,
                result.t_statistic,
                result.p_value,
                result.alpha,
                if result.verdict { "yes" } else { "no" },
                result
                    .warning
                    .as_deref()
                    .map(|w| format!(" [{w}]"))
                    .unwrap_or_default(),
                result.sample_description,
            );
            pairs.push(PairwiseResult {
                a: label(&groups[i]),
                b: label(&groups[j]),
                result,
            });
        }
    }
    let json_path = cfg.out.join(COMPARISON_JSON);
    let text_path = cfg.out.join(COMPARISON_TEXT);
    write_file(
        &json_path,
        &serde_json::to_string_pretty(&pairs).expect("results serialize"),
    )?;
    write_file(&text_path, &text)?;
    Ok(CompareOutcome {
        pairs,
        text,
        files: vec![json_path, text_path],
    })
}

/// Predicts every nonblank line of `input`, in order.
pub fn run_predict(checkpoint: &Path, input: &str) -> Result<Vec<Prediction>> {
    let posts: Vec<&str> = input.lines().filter(|l| !l.trim().is_empty()).collect();
    if posts.is_empty() {
        return Err(PipelineError::Usage("no input posts to classify".into()));
    }
    let (classifier, _) = TrainedClassifier::load(checkpoint)?;
    Ok(classifier.predict(&posts)?)
}

/// `code<TAB>name<TAB>p0 .. p5`.
pub fn format_prediction(p: &Prediction) -> String {
    let probs: Vec<String> = p.probs.iter().map(|x| format!("{x:.6}")).collect();
    format!(
        "{}\t{}\t{}",
        p.class.code(),
        p.class.name(),
        probs.join("\t")
    )
}
