use super::{DenseMatrix, NnError};

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy on logits, and its gradient with respect to the
/// logits. Per sample the loss is `softplus(z) - y·z` and the gradient
/// `(sigmoid(z) - y) / N`.
pub fn sigmoid_ce(logits: &DenseMatrix, labels: &DenseMatrix) -> Result<(f64, DenseMatrix), NnError> {
    if logits.shape() != labels.shape() {
        return Err(NnError::Shape {
            op: "sigmoid_ce",
            left: logits.shape(),
            right: labels.shape(),
        });
    }
    if let Some((index, &value)) = labels
        .values()
        .iter()
        .enumerate()
        .find(|(_, &y)| y != 0.0 && y != 1.0)
    {
        return Err(NnError::BadLabel { index, value });
    }
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.values().iter().zip(labels.values()) {
        total += softplus(z) - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    let grad = DenseMatrix::from_vec(logits.rows(), logits.cols(), grad)?;
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(z: f64, y: f64) -> (f64, f64) {
        let (loss, grad) = sigmoid_ce(
            &DenseMatrix::from_rows(&[&[z]]),
            &DenseMatrix::from_rows(&[&[y]]),
        )
        .unwrap();
        (loss, grad.values()[0])
    }

    #[test]
    fn zero_logit_costs_ln2() {
        let (loss, grad) = single(0.0, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, -0.5);
    }

    #[test]
    fn saturated_logits_stay_finite() {
        let (loss, grad) = single(40.0, 1.0);
        assert!(loss.is_finite() && loss < 1e-15);
        assert!(grad.abs() < 1e-15);
        let (loss, grad) = single(-800.0, 1.0);
        assert_eq!(loss, 800.0);
        assert_eq!(grad, -1.0);
        let (loss, _) = single(800.0, 0.0);
        assert_eq!(loss, 800.0);
    }

    #[test]
    fn negative_logit_with_negative_label_is_softplus() {
        // ln(1 + e^-2)
        let (loss, _) = single(-2.0, 0.0);
        assert!((loss - 0.126_928_011_042_972_5).abs() < 1e-15);
    }

    #[test]
    fn labels_outside_binary_are_rejected() {
        let err = sigmoid_ce(
            &DenseMatrix::from_rows(&[&[0.0], &[1.0]]),
            &DenseMatrix::from_rows(&[&[1.0], &[0.5]]),
        )
        .unwrap_err();
        assert_eq!(err, NnError::BadLabel { index: 1, value: 0.5 });
    }

    #[test]
    fn gradient_is_scaled_by_batch_size() {
        let (_, grad) = sigmoid_ce(
            &DenseMatrix::from_rows(&[&[0.0], &[0.0]]),
            &DenseMatrix::from_rows(&[&[1.0], &[0.0]]),
        )
        .unwrap();
        assert_eq!(grad.values(), &[-0.25, 0.25]);
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        for z in [-700.0, -30.0, -1.0, 0.0, 2.5, 36.0, 700.0] {
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }
}
