use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    /// Student's t on per-element differences.
    Paired,
    /// Two-sample Student's t with pooled variance.
    Unpaired,
    /// Paired bootstrap over test examples.
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub mode: TestMode,
    pub t_statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// Always `p_value < alpha`.
    pub verdict: bool,
    pub mean_difference: f64,
    pub sample_description: String,
    /// Set when the statistic is undefined and `p_value` was forced to 1.
    pub warning: Option<String>,
}

impl SignificanceResult {
    fn new(
        mode: TestMode,
        t: f64,
        p: f64,
        alpha: f64,
        mean_difference: f64,
        sample_description: String,
        warning: Option<String>,
    ) -> Self {
        let p = p.clamp(0.0, 1.0);
        SignificanceResult {
            mode,
            t_statistic: t,
            p_value: p,
            alpha,
            verdict: p < alpha,
            mean_difference,
            sample_description,
            warning,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn two_tailed_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    2.0 * dist.sf(t.abs())
}

/// Two-tailed Student's t-test of `a` against `b`.
pub fn significance_test(
    a: &[f64],
    b: &[f64],
    alpha: f64,
    paired: bool,
) -> Result<SignificanceResult, EvalError> {
    for xs in [a, b] {
        if xs.len() < 2 {
            return Err(EvalError::InsufficientSamples {
                needed: 2,
                found: xs.len(),
            });
        }
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (mode, t_parts, df, description) = if paired {
        if a.len() != b.len() {
            return Err(EvalError::LengthMismatch {
                golds: a.len(),
                preds: b.len(),
            });
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        (
            TestMode::Paired,
            (mean(&d), (variance(&d) / n).sqrt()),
            n - 1.0,
            format!("paired differences over {} matched samples", d.len()),
        )
    } else {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
        (
            TestMode::Unpaired,
            (mean(a) - mean(b), (pooled * (1.0 / na + 1.0 / nb)).sqrt()),
            na + nb - 2.0,
            format!("two independent samples of {} and {}", a.len(), b.len()),
        )
    };
    let (diff, se) = t_parts;
    if se == 0.0 {
        return Ok(SignificanceResult::new(
            mode,
            0.0,
            1.0,
            alpha,
            diff,
            description,
            Some("zero variance: t statistic undefined, p reported as 1".into()),
        ));
    }
    let t = diff / se;
    Ok(SignificanceResult::new(
        mode,
        t,
        two_tailed_p(t, df),
        alpha,
        diff,
        description,
        None,
    ))
}

/// Paired bootstrap on the accuracy difference between two prediction
/// vectors over the same gold labels. The p-value is the share of resampled
/// differences at least as far from the observed difference as the observed
/// difference is from zero.
pub fn bootstrap_test(
    gold: &[usize],
    pred_a: &[usize],
    pred_b: &[usize],
    resamples: usize,
    seed: u64,
    alpha: f64,
) -> Result<SignificanceResult, EvalError> {
    if gold.len() != pred_a.len() || gold.len() != pred_b.len() {
        return Err(EvalError::LengthMismatch {
            golds: gold.len(),
            preds: pred_a.len().min(pred_b.len()),
        });
    }
    if gold.len() < 2 || resamples < 2 {
        return Err(EvalError::InsufficientSamples {
            needed: 2,
            found: gold.len().min(resamples),
        });
    }
    // Per-example correctness difference in {-1, 0, 1}.
    let d: Vec<f64> = (0..gold.len())
        .map(|i| {
            f64::from(u8::from(pred_a[i] == gold[i])) - f64::from(u8::from(pred_b[i] == gold[i]))
        })
        .collect();
    let observed = mean(&d);
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deltas: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let description =
        format!("paired bootstrap over {n} test examples, {resamples} resamples, seed {seed}");
    let se = variance(&deltas).sqrt();
    if se == 0.0 {
        return Ok(SignificanceResult::new(
            TestMode::Bootstrap,
            0.0,
            1.0,
            alpha,
            observed,
            description,
            Some("zero variance: t statistic undefined, p reported as 1".into()),
        ));
    }
    let extreme = deltas
        .iter()
        .filter(|&&x| (x - observed).abs() >= observed.abs())
        .count();
    let p = (extreme as f64 + 1.0) / (resamples as f64 + 1.0);
    Ok(SignificanceResult::new(
        TestMode::Bootstrap,
        observed / se,
        p,
        alpha,
        observed,
        description,
        None,
    ))
}
