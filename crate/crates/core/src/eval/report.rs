use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, confusion, f1_per_class, macro_f1, ConfusionMatrix};
use super::significance::SignificanceResult;
use super::EvalError;
use crate::corpus::NUM_CLASSES;

/// Identifies the labeled test set a report was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSplitId {
    pub name: String,
    /// Content digest of the evaluated file.
    pub digest: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReportJson", into = "ReportJson")]
pub struct EvalReport {
    pub model: String,
    pub manifest_ref: String,
    pub seed: Option<u64>,
    pub test_split: TestSplitId,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    pub significance: Vec<SignificanceResult>,
    pub gold: Vec<usize>,
    pub pred: Vec<usize>,
}

/// On-disk shape: per-class F1 keyed `c0`..`c5`.
#[derive(Serialize, Deserialize)]
struct ReportJson {
    model: String,
    manifest_ref: String,
    #[serde(default)]
    seed: Option<u64>,
    test_split: TestSplitId,
    n: usize,
    accuracy: f64,
    macro_f1: f64,
    f1: BTreeMap<String, f64>,
    confusion: ConfusionMatrix,
    #[serde(default)]
    significance: Vec<SignificanceResult>,
    gold: Vec<usize>,
    pred: Vec<usize>,
}

impl From<EvalReport> for ReportJson {
    fn from(r: EvalReport) -> Self {
        ReportJson {
            model: r.model,
            manifest_ref: r.manifest_ref,
            seed: r.seed,
            test_split: r.test_split,
            n: r.n,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            f1: r
                .per_class_f1
                .iter()
                .enumerate()
                .map(|(c, f)| (format!("c{c}"), *f))
                .collect(),
            confusion: r.confusion,
            significance: r.significance,
            gold: r.gold,
            pred: r.pred,
        }
    }
}

impl TryFrom<ReportJson> for EvalReport {
    type Error = String;

    fn try_from(j: ReportJson) -> Result<Self, Self::Error> {
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        for (c, f) in per_class_f1.iter_mut().enumerate() {
            *f = *j
                .f1
                .get(&format!("c{c}"))
                .ok_or(format!("missing f1.c{c}"))?;
        }
        if j.confusion.total() != j.n as u64 {
            return Err(format!(
                "confusion total {} differs from n {}",
                j.confusion.total(),
                j.n
            ));
        }
        Ok(EvalReport {
            model: j.model,
            manifest_ref: j.manifest_ref,
            seed: j.seed,
            test_split: j.test_split,
            n: j.n,
            accuracy: j.accuracy,
            macro_f1: j.macro_f1,
            per_class_f1,
            confusion: j.confusion,
            significance: j.significance,
            gold: j.gold,
            pred: j.pred,
        })
    }
}

impl EvalReport {
    /// Computes every metric from gold and predicted class codes.
    pub fn new(
        model: &str,
        manifest_ref: &str,
        seed: Option<u64>,
        test_split: TestSplitId,
        gold: Vec<usize>,
        pred: Vec<usize>,
    ) -> Result<Self, EvalError> {
        let cm = confusion(&gold, &pred)?;
        Ok(EvalReport {
            model: model.to_string(),
            manifest_ref: manifest_ref.to_string(),
            seed,
            test_split,
            n: gold.len(),
            accuracy: accuracy(&cm)?,
            macro_f1: macro_f1(&cm)?,
            per_class_f1: f1_per_class(&cm),
            confusion: cm,
            significance: Vec::new(),
            gold,
            pred,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Per-example correctness, for paired comparisons.
    pub fn correct(&self) -> Vec<bool> {
        self.gold
            .iter()
            .zip(&self.pred)
            .map(|(g, p)| g == p)
            .collect()
    }
}

/// Aligned table: one row per report, columns F1 C0..C5 then Accuracy.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let mut out = format!("{:<width$}", "Model");
    for c in 0..NUM_CLASSES {
        let _ = write!(out, "  {:>6}", format!("F1 C{c}"));
    }
    out.push_str("  Accuracy\n");
    for r in reports {
        let _ = write!(out, "{:<width$}", r.model);
        for f in r.per_class_f1 {
            let _ = write!(out, "  {f:>6.2}");
        }
        let _ = writeln!(out, "  {:>8.2}", r.accuracy);
    }
    out
}

/// Confusion matrix with gold rows and predicted columns.
pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("gold\\pred");
    for c in 0..NUM_CLASSES {
        let _ = write!(out, " {:>5}", format!("c{c}"));
    }
    out.push('\n');
    for (g, row) in cm.counts.iter().enumerate() {
        let _ = write!(out, "{:<9}", format!("c{g}"));
        for v in row {
            let _ = write!(out, " {v:>5}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split() -> TestSplitId {
        TestSplitId {
            name: "sdcnl_test".into(),
            digest: "abc".into(),
            n: 6,
        }
    }

    #[test]
    fn invariants_hold() {
        let r = EvalReport::new(
            "lr",
            "m.txt",
            Some(1),
            split(),
            vec![0, 1, 2, 3, 4, 5],
            vec![0, 1, 2, 0, 0, 0],
        )
        .unwrap();
        assert_eq!(r.accuracy, r.confusion.trace() as f64 / r.n as f64);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn json_round_trip_and_shape() {
        let r = EvalReport::new(
            "lr",
            "m.txt",
            None,
            split(),
            vec![0, 1, 1, 3, 4, 5],
            vec![0, 1, 2, 3, 0, 5],
        )
        .unwrap();
        let text = r.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "model",
            "manifest_ref",
            "n",
            "accuracy",
            "macro_f1",
            "f1",
            "confusion",
            "significance",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["f1"]["c5"].is_number());
        assert_eq!(v["confusion"].as_array().unwrap().len(), 6);
        assert_eq!(EvalReport::from_json(&text).unwrap(), r);
    }

    #[test]
    fn table_column_order() {
        let r = EvalReport::new(
            "xlnet",
            "m",
            None,
            split(),
            vec![0, 1, 2, 3, 4, 5],
            vec![0, 1, 2, 3, 4, 5],
        )
        .unwrap();
        let t = render_table(&[&r]);
        let header = t.lines().next().unwrap();
        let cols: Vec<&str> = header
            .split("  ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        assert_eq!(
            cols,
            ["Model", "F1 C0", "F1 C1", "F1 C2", "F1 C3", "F1 C4", "F1 C5", "Accuracy"]
        );
        assert!(t.lines().nth(1).unwrap().ends_with("1.00"));
    }
}
