//! Reconstruction and classification losses with their exact gradients.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before the log in the
/// cross-entropy; avoids log(0) without measurable bias.
pub const CCE_PROB_CLAMP: f64 = 1e-12;

fn check_same_shape(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", pred.dim()),
            got: format!("{:?}", target.dim()),
        });
    }
    Ok(())
}

/// Mean squared error over all entries.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    check_same_shape(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// Gradient of `mse_loss` w.r.t. `pred`: `2 (pred - target) / len`.
pub fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    Ok((pred - target) * scale)
}

fn check_probs(pred_probs: &Array2<f64>, labels: &[u8]) -> Result<()> {
    if pred_probs.nrows() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} label entries", pred_probs.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    let classes = pred_probs.ncols();
    for &label in labels {
        if usize::from(label) >= classes {
            return Err(Error::LabelOutOfRange {
                label: usize::from(label),
                num_classes: classes,
            });
        }
    }
    for (i, row) in pred_probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if !(sum - 1.0).abs().is_finite() || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "probability row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Categorical cross-entropy: mean over samples of `-ln p[true label]`,
/// with the probability clamped to `CCE_PROB_CLAMP` before the log.
pub fn cce_loss(pred_probs: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    check_probs(pred_probs, labels)?;
    let n = labels.len() as f64;
    let sum: f64 = pred_probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -(row[usize::from(y)].max(CCE_PROB_CLAMP)).ln())
        .sum();
    Ok(sum / n)
}

/// Gradient of `cce_loss` w.r.t. the probabilities:
/// `-1 / (N * max(p_y, clamp))` at the true label, zero elsewhere.
pub fn cce_grad(pred_probs: &Array2<f64>, labels: &[u8]) -> Result<Array2<f64>> {
    check_probs(pred_probs, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(pred_probs.dim());
    for (i, &y) in labels.iter().enumerate() {
        let y = usize::from(y);
        let p = pred_probs[[i, y]].max(CCE_PROB_CLAMP);
        grad[[i, y]] = -1.0 / (n * p);
    }
    Ok(grad)
}
