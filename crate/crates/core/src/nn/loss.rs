use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    /// Mean of `-ln(p_correct)` over the batch.
    pub loss: f64,
    /// Gradient with respect to the pre-softmax logits: `(p - onehot) / batch`.
    pub grad: Tensor<T>,
    /// Samples whose correct-class probability hit [`PROB_FLOOR`].
    pub clamped: usize,
    /// Samples whose arg-max matched the label.
    pub correct: usize,
}

pub fn softmax_cross_entropy<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<LossOutput<T>> {
    let n = probs.rows();
    let classes = probs.row_len();
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut grad = probs.clone();
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut correct = 0;
    let inv_n = T::from_f64(1.0 / n as f64);
    for (i, (row, &label)) in grad
        .data_mut()
        .chunks_exact_mut(classes)
        .zip(labels)
        .enumerate()
    {
        if label >= classes {
            return Err(Error::shape(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::shape(format!(
                "row {i} sums to {sum}, not a probability vector"
            )));
        }
        let p = row[label].as_f64();
        if p < PROB_FLOOR {
            clamped += 1;
        }
        loss -= p.max(PROB_FLOOR).ln();
        if argmax(row) == label {
            correct += 1;
        }
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad,
        clamped,
        correct,
    })
}

/// Index of the first maximum.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_has_zero_loss() {
        let p = Tensor::from_vec(&[1, 3], vec![0.0f64, 1.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&p, &[1]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.correct, 1);
    }

    #[test]
    fn uniform_has_ln10_loss() {
        let p = Tensor::filled(&[2, 10], 0.1f64);
        let out = softmax_cross_entropy(&p, &[3, 7]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        assert!((out.loss - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn clamps_zero_probability() {
        let p = Tensor::from_vec(&[1, 2], vec![1.0f64, 0.0]).unwrap();
        let out = softmax_cross_entropy(&p, &[1]).unwrap();
        assert_eq!(out.clamped, 1);
        assert!((out.loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_rows_and_labels() {
        let p = Tensor::from_vec(&[1, 2], vec![0.7f64, 0.7]).unwrap();
        assert!(softmax_cross_entropy(&p, &[0]).is_err());
        let p = Tensor::from_vec(&[1, 2], vec![0.5f64, 0.5]).unwrap();
        assert!(softmax_cross_entropy(&p, &[2]).is_err());
        assert!(softmax_cross_entropy(&p, &[0, 1]).is_err());
    }
}
