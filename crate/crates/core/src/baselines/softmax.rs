use super::BaselineError;

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln probs[label]`, with the probability clamped to [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64, BaselineError> {
    let p = *probs
        .get(label)
        .ok_or(BaselineError::LabelOutOfRange(label))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(logits), label)` w.r.t. the logits:
/// `softmax(logits) - one_hot(label)`.
pub fn softmax_cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>, BaselineError> {
    let mut g = softmax(logits)?;
    let slot = g
        .get_mut(label)
        .ok_or(BaselineError::LabelOutOfRange(label))?;
    *slot -= 1.0;
    Ok(g)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax(&[0.0; 6]).unwrap();
        for v in p {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_way_closed_form() {
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let p = softmax(&[1000.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_nan_and_inf() {
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(BaselineError::NonFinite)
        ));
        assert!(matches!(
            softmax(&[f64::INFINITY]),
            Err(BaselineError::NonFinite)
        ));
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let uniform = [1.0 / 6.0; 6];
        assert!((cross_entropy(&uniform, 4).unwrap() - 1.791759469228055).abs() < 1e-12);
        assert!((cross_entropy(&[0.7, 0.2, 0.1], 1).unwrap() - 1.6094379124341003).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert!(matches!(
            cross_entropy(&uniform, 6),
            Err(BaselineError::LabelOutOfRange(6))
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.1, 0.5, 0.1, 0.1, 0.1]), 2);
        assert_eq!(argmax(&[0.1, 0.3, 0.1, 0.3, 0.1, 0.1]), 1);
    }

    proptest! {
        #[test]
        fn sums_to_one_and_preserves_argmax(v in prop::collection::vec(-50.0f64..50.0, 1..10)) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&p), argmax(&v));
        }

        #[test]
        fn shift_invariant_argmax(v in prop::collection::vec(-20.0f64..20.0, 6), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert_eq!(argmax(&softmax(&v).unwrap()), argmax(&softmax(&shifted).unwrap()));
        }
    }
}
