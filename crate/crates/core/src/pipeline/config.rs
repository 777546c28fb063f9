//! Run configuration: a TOML document layered as defaults < file < dotted
//! overrides < named flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineTrainConfig, CnnLstmConfig};
use crate::classifier::{CNN_LSTM, LOGREG};
use crate::corpus::{CausalCategory, ColumnMap, Split};
use crate::eval::DEFAULT_ALPHA;
use crate::finetune::FineTuneConfig;
use crate::stats::CountBasis;
use crate::textprep::CleanConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("bad override `{0}`: expected KEY=VALUE with a dotted key")]
    BadOverride(String),
    #[error("`{key}` cannot be set: `{parent}` is not a table")]
    NotATable { key: String, parent: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad balance spec `{0}`: expected CLASSES:N, e.g. c1,c2,c3:120")]
    BadBalance(String),
    #[error("{flag} does not apply to model `{model}`")]
    FlagNotApplicable { flag: &'static str, model: String },
}

/// Which labeled files make up the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainComposition {
    Crawled,
    SdcnlTrain,
    Both,
}

impl TrainComposition {
    pub fn splits(self) -> &'static [Split] {
        match self {
            TrainComposition::Crawled => &[Split::Crawled],
            TrainComposition::SdcnlTrain => &[Split::SdcnlTrain],
            TrainComposition::Both => &[Split::Crawled, Split::SdcnlTrain],
        }
    }
}

impl FromStr for TrainComposition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "crawled" => Ok(TrainComposition::Crawled),
            "sdcnl_train" => Ok(TrainComposition::SdcnlTrain),
            "both" => Ok(TrainComposition::Both),
            other => Err(ConfigError::Invalid(format!(
                "train_composition `{other}` is not one of crawled, sdcnl_train, both"
            ))),
        }
    }
}

/// `n` duplicates added to each listed class of the training corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceSpec {
    pub classes: Vec<CausalCategory>,
    pub n: usize,
}

impl BalanceSpec {
    pub fn none() -> Self {
        BalanceSpec {
            classes: Vec::new(),
            n: 0,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.classes.is_empty() || self.n == 0
    }
}

impl FromStr for BalanceSpec {
    type Err = ConfigError;

    /// `c1,c2,c3:120`; `none` or the empty string disable balancing.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(BalanceSpec::none());
        }
        let bad = || ConfigError::BadBalance(s.to_string());
        let (classes, n) = s.rsplit_once(':').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let mut parsed = classes
            .split(',')
            .map(|c| CausalCategory::parse(c).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?;
        parsed.sort();
        parsed.dedup();
        Ok(BalanceSpec { classes: parsed, n })
    }
}

impl fmt::Display for BalanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_noop() {
            return f.write_str("none");
        }
        let classes: Vec<String> = self
            .classes
            .iter()
            .map(|c| format!("c{}", c.code()))
            .collect();
        write!(f, "{}:{}", classes.join(","), self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub crawled: Option<PathBuf>,
    pub sdcnl_train: Option<PathBuf>,
    pub sdcnl_test: Option<PathBuf>,
    pub columns: ColumnMap,
    pub train_composition: TrainComposition,
    /// Per-class share of the training corpus held out for model selection.
    pub dev_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            crawled: None,
            sdcnl_train: None,
            sdcnl_test: None,
            columns: ColumnMap::default(),
            train_composition: TrainComposition::Both,
            dev_fraction: 0.1,
        }
    }
}

impl DataConfig {
    pub fn path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Crawled => self.crawled.as_deref(),
            Split::SdcnlTrain => self.sdcnl_train.as_deref(),
            Split::SdcnlTest => self.sdcnl_test.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `logreg`, `cnn_lstm`, or an encoder backend id.
    pub name: String,
    /// Encoder checkpoint reference; the backend default when absent.
    pub checkpoint: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: LOGREG.into(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub basis: CountBasis,
    pub clean: CleanConfig,
}

/// Protocol for `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Paired t-test when every group has at least two reports, bootstrap otherwise.
    #[default]
    Auto,
    Paired,
    Unpaired,
    Bootstrap,
}

impl FromStr for CompareMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "auto" => Ok(CompareMode::Auto),
            "paired" => Ok(CompareMode::Paired),
            "unpaired" => Ok(CompareMode::Unpaired),
            "bootstrap" => Ok(CompareMode::Bootstrap),
            other => Err(ConfigError::Invalid(format!(
                "compare mode `{other}` is not one of auto, paired, unpaired, bootstrap"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub top_k: usize,
    pub alpha: f64,
    pub mode: CompareMode,
    pub bootstrap_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_k: 3,
            alpha: DEFAULT_ALPHA,
            mode: CompareMode::Auto,
            bootstrap_resamples: 1000,
        }
    }
}

/// Everything a command needs. `seed` is the single run seed: it drives the
/// dev split, balancing and the selected model's training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    /// `CLASSES:N` as accepted by [`BalanceSpec`].
    pub balance: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub logreg: BaselineTrainConfig,
    pub cnn_lstm: CnnLstmConfig,
    pub finetune: FineTuneConfig,
    pub stats: StatsConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            seed: 0,
            balance: "c1,c2,c3:120".into(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            logreg: BaselineTrainConfig::default(),
            cnn_lstm: CnnLstmConfig::default(),
            finetune: FineTuneConfig::default(),
            stats: StatsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Values of the named command-line flags; each maps to a config key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedFlags {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub checkpoint: Option<String>,
    pub max_len: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub train_composition: Option<TrainComposition>,
    pub balance: Option<String>,
}

/// `KEY=VALUE` with a dotted key. VALUE is read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::BadOverride(raw.to_string()));
    }
    Ok((key.to_string(), parse_value(value.trim())))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut table = root;
    let mut path = String::new();
    for part in parts {
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(part);
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(ConfigError::NotATable {
                    key: key.to_string(),
                    parent: path,
                })
            }
        };
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Dotted keys of every leaf in `table`, in sorted order.
pub fn flatten(table: &toml::Table) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
        for (k, v) in table {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                other => out.push((key, other.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn to_table(cfg: &RunConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("run config serializes to a table")
}

impl RunConfig {
    /// Layers `file`, then `overrides`, then `flags` over the defaults.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &[(String, toml::Value)],
        flags: &NamedFlags,
    ) -> Result<RunConfig, ConfigError> {
        let mut table = to_table(&RunConfig::default());
        let path = file.map(|p| p.display().to_string()).unwrap_or_default();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let parsed: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            merge(&mut table, parsed);
        }
        for (key, value) in overrides {
            set_dotted(&mut table, key, value.clone())?;
        }
        let mut cfg = Self::from_table(&table, &path)?;
        cfg.apply_flags(flags)?;
        cfg.finalize();
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_table(table: &toml::Table, path: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig =
            toml::Value::Table(table.clone())
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: if path.is_empty() {
                        "(overrides)".into()
                    } else {
                        path.to_string()
                    },
                    message: e.message().to_string(),
                })?;
        // Keys that did not survive the round trip are misspelled or unknown.
        let known: std::collections::BTreeSet<String> = flatten(&to_table(&cfg))
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        if let Some((k, _)) = flatten(table).into_iter().find(|(k, _)| !known.contains(k)) {
            return Err(ConfigError::UnknownKey(k));
        }
        Ok(cfg)
    }

    fn apply_flags(&mut self, flags: &NamedFlags) -> Result<(), ConfigError> {
        if let Some(out) = &flags.out {
            self.out = out.clone();
        }
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(model) = &flags.model {
            self.model.name = model.clone();
        }
        if let Some(ckpt) = &flags.checkpoint {
            self.model.checkpoint = Some(ckpt.clone());
        }
        if let Some(tc) = flags.train_composition {
            self.data.train_composition = tc;
        }
        if let Some(b) = &flags.balance {
            self.balance = b.clone();
        }
        let model = self.model.name.clone();
        match model.as_str() {
            LOGREG => {
                if flags.max_len.is_some() {
                    return Err(ConfigError::FlagNotApplicable {
                        flag: "--max-len",
                        model,
                    });
                }
                set_train_knobs(&mut self.logreg, flags);
            }
            CNN_LSTM => {
                if let Some(v) = flags.max_len {
                    self.cnn_lstm.max_len = v;
                }
                set_train_knobs(&mut self.cnn_lstm.train, flags);
            }
            _ => {
                let ft = &mut self.finetune;
                if let Some(v) = flags.max_len {
                    ft.max_len = v;
                }
                if let Some(v) = flags.learning_rate {
                    ft.learning_rate = v;
                }
                if let Some(v) = flags.batch_size {
                    ft.batch_size = v;
                }
                if let Some(v) = flags.epochs {
                    ft.epochs = v;
                }
            }
        }
        Ok(())
    }

    /// Propagates the run seed into every model section.
    fn finalize(&mut self) {
        self.logreg.seed = self.seed;
        self.cnn_lstm.train.seed = self.seed;
        self.finetune.seed = self.seed;
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.balance_spec()?;
        let f = self.data.dev_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "data.dev_fraction must be in (0, 1), got {f}"
            )));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "eval.alpha must be in (0, 1), got {}",
                self.eval.alpha
            )));
        }
        self.data
            .columns
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn balance_spec(&self) -> Result<BalanceSpec, ConfigError> {
        self.balance.parse()
    }

    /// The whole configuration as sorted dotted keys.
    pub fn flattened(&self) -> Vec<(String, toml::Value)> {
        flatten(&to_table(self))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn set_train_knobs(cfg: &mut BaselineTrainConfig, flags: &NamedFlags) {
    if let Some(v) = flags.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn precedence_is_flags_over_overrides_over_file() {
        let f = write(
            "seed = 3\n[logreg]\nepochs = 7\nlearning_rate = 0.5\n[data]\ndev_fraction = 0.2\n",
        );
        let overrides = vec![
            parse_override("logreg.epochs=9").unwrap(),
            parse_override("data.dev_fraction=0.25").unwrap(),
        ];
        let flags = NamedFlags {
            epochs: Some(11),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(f.path()), &overrides, &flags).unwrap();
        assert_eq!(cfg.logreg.epochs, 11);
        assert_eq!(cfg.logreg.learning_rate, 0.5);
        assert_eq!(cfg.data.dev_fraction, 0.25);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.logreg.seed, 3);
        assert_eq!(cfg.cnn_lstm.max_len, 256);
    }

    #[test]
    fn named_flags_target_the_selected_model() {
        let flags = NamedFlags {
            model: Some("xlnet".into()),
            learning_rate: Some(1e-3),
            max_len: Some(128),
            seed: Some(4),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(None, &[], &flags).unwrap();
        assert_eq!(cfg.finetune.learning_rate, 1e-3);
        assert_eq!(cfg.finetune.max_len, 128);
        assert_eq!(cfg.finetune.seed, 4);
        assert_eq!(
            cfg.logreg.learning_rate,
            BaselineTrainConfig::default().learning_rate
        );

        let lr_flags = NamedFlags {
            max_len: Some(128),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(None, &[], &lr_flags),
            Err(ConfigError::FlagNotApplicable { .. })
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::resolve(
            None,
            &[parse_override("logreg.epoch=3").unwrap()],
            &NamedFlags::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey(ref k) if k == "logreg.epoch"),
            "{err}"
        );
        let f = write("[data]\ncrawld = \"x.csv\"\n");
        assert!(matches!(
            RunConfig::resolve(Some(f.path()), &[], &NamedFlags::default()),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn optional_keys_can_be_set_by_override() {
        let o = [
            parse_override("data.crawled=data/crawled.csv").unwrap(),
            parse_override("finetune.pooling=mean").unwrap(),
            parse_override("data.columns.label_encoding=category_names").unwrap(),
        ];
        let cfg = RunConfig::resolve(None, &o, &NamedFlags::default()).unwrap();
        assert_eq!(
            cfg.data.crawled.as_deref(),
            Some(Path::new("data/crawled.csv"))
        );
        assert_eq!(
            cfg.finetune.pooling,
            Some(crate::finetune::PoolingRule::Mean)
        );
    }

    #[test]
    fn overrides_need_a_key() {
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
        assert_eq!(
            parse_override("a=1e-3").unwrap().1,
            toml::Value::Float(1e-3)
        );
        assert_eq!(
            parse_override("a=both").unwrap().1,
            toml::Value::String("both".into())
        );
    }

    #[test]
    fn balance_spec_parsing() {
        let b: BalanceSpec = "c3,bias_abuse,2:120".parse().unwrap();
        assert_eq!(
            b.classes,
            [
                CausalCategory::BiasAbuse,
                CausalCategory::JobsCareers,
                CausalCategory::Medication
            ]
        );
        assert_eq!(b.n, 120);
        assert_eq!(b.to_string(), "c1,c2,c3:120");
        assert!("none".parse::<BalanceSpec>().unwrap().is_noop());
        assert!("c1,c9:5".parse::<BalanceSpec>().is_err());
        assert!("c1".parse::<BalanceSpec>().is_err());
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(RunConfig::resolve(
            None,
            &[parse_override("data.dev_fraction=1.5").unwrap()],
            &NamedFlags::default()
        )
        .is_err());
        assert!(RunConfig::resolve(
            None,
            &[parse_override("seed.x=1").unwrap()],
            &NamedFlags::default()
        )
        .is_err());
    }
}
