use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use crate::corpus::{CausalCategory, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub class: CausalCategory,
    pub recall: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusedPair {
    pub gold: CausalCategory,
    pub pred: CausalCategory,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Classes present in gold, best recall first; ties go to the lower code.
    pub recall_ranking: Vec<ClassRecall>,
    pub strongest: Option<CausalCategory>,
    pub weakest: Option<CausalCategory>,
    /// Off-diagonal cells by descending count, at most `k`.
    pub confused_pairs: Vec<ConfusedPair>,
}

pub fn error_analysis(report: &EvalReport, top_k: usize) -> ErrorAnalysis {
    let cm = &report.confusion;
    let mut recall_ranking: Vec<ClassRecall> = CausalCategory::ALL
        .iter()
        .filter(|c| cm.row_sum(c.code()) > 0)
        .map(|&c| ClassRecall {
            class: c,
            recall: cm.recall(c.code()),
            support: cm.row_sum(c.code()),
        })
        .collect();
    recall_ranking.sort_by(|a, b| {
        b.recall
            .total_cmp(&a.recall)
            .then(a.class.code().cmp(&b.class.code()))
    });

    let mut confused_pairs: Vec<ConfusedPair> = (0..NUM_CLASSES)
        .flat_map(|g| (0..NUM_CLASSES).map(move |p| (g, p)))
        .filter(|&(g, p)| g != p && cm.counts[g][p] > 0)
        .map(|(g, p)| ConfusedPair {
            gold: CausalCategory::from_code(g).expect("in range"),
            pred: CausalCategory::from_code(p).expect("in range"),
            count: cm.counts[g][p],
        })
        .collect();
    // Stable sort keeps row-major order among equal counts.
    confused_pairs.sort_by_key(|p| std::cmp::Reverse(p.count));
    confused_pairs.truncate(top_k);

    ErrorAnalysis {
        strongest: recall_ranking.first().map(|r| r.class),
        weakest: recall_ranking.last().map(|r| r.class),
        recall_ranking,
        confused_pairs,
    }
}

impl ErrorAnalysis {
    pub fn render(&self) -> String {
        let mut out = String::from("per-class recall (best first)\n");
        for r in &self.recall_ranking {
            let mark = if Some(r.class) == self.strongest {
                "  <- strongest"
            } else if Some(r.class) == self.weakest {
                "  <- weakest"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  c{} {:<13} recall {:.3}  support {}{mark}",
                r.class.code(),
                r.class.name(),
                r.recall,
                r.support
            );
        }
        out.push_str("most confused gold -> predicted\n");
        if self.confused_pairs.is_empty() {
            out.push_str("  none\n");
        }
        for p in &self.confused_pairs {
            let _ = writeln!(
                out,
                "  c{} {} -> c{} {}: {}",
                p.gold.code(),
                p.gold.name(),
                p.pred.code(),
                p.pred.name(),
                p.count
            );
        }
        out
    }
}
