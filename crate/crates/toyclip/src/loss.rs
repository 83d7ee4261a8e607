//! Symmetric image-text contrastive loss with analytic gradients.
//!
//! For a batch of `N` matched rows, logits are `S = I Tᵀ / τ`.
//! The image loss is the mean cross-entropy of each row of `S` against its
//! diagonal entry, the text loss the same over columns, and the total loss
//! their average. With `P` the row-softmax and `Q` the column-softmax of
//! `S`, `∂L/∂S = ((P - Id) + (Q - Id)) / 2N`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::ToyClipError;

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub image_loss: f64,
    pub text_loss: f64,
    pub grad_image: Array2<f64>,
    pub grad_text: Array2<f64>,
}

/// Row-wise log-sum-exp.
fn logsumexp_rows(m: &Array2<f64>) -> Vec<f64> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (j, v)| if v > a.1 { (j, v) } else { a });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, v)| (v - max).exp())
                .sum();
            max + rest.ln_1p()
        })
        .collect()
}

/// Loss and gradients with respect to both feature matrices. Rows are
/// expected to be L2-normalized by the caller; the function itself is
/// defined for any finite input.
pub fn contrastive_loss(
    image: ArrayView2<f64>,
    text: ArrayView2<f64>,
    temperature: f64,
) -> Result<ContrastiveLoss, ToyClipError> {
    let n = image.nrows();
    if n == 0 {
        return Err(ToyClipError::EmptyBatch);
    }
    if text.dim() != image.dim() {
        return Err(ToyClipError::ShapeMismatch(format!(
            "image {:?} vs text {:?}",
            image.dim(),
            text.dim()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ToyClipError::InvalidConfig("temperature must be > 0".into()));
    }
    if image.iter().chain(text.iter()).any(|v| !v.is_finite()) {
        return Err(ToyClipError::NonFiniteInput);
    }

    let logits = image.dot(&text.t()) / temperature;
    let logits_t = logits.t().to_owned();
    let lse_rows = logsumexp_rows(&logits);
    let lse_cols = logsumexp_rows(&logits_t);

    let nf = n as f64;
    let image_loss = (0..n).map(|i| lse_rows[i] - logits[[i, i]]).sum::<f64>() / nf;
    let text_loss = (0..n).map(|j| lse_cols[j] - logits[[j, j]]).sum::<f64>() / nf;

    let mut grad_logits = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let p_row = (logits[[i, j]] - lse_rows[i]).exp();
            let p_col = (logits[[i, j]] - lse_cols[j]).exp();
            grad_logits[[i, j]] = p_row + p_col;
        }
        grad_logits[[i, i]] -= 2.0;
    }
    grad_logits /= 2.0 * nf;

    let grad_image = grad_logits.dot(&text) / temperature;
    let grad_text = grad_logits.t().dot(&image) / temperature;

    Ok(ContrastiveLoss {
        loss: (image_loss + text_loss) / 2.0,
        image_loss,
        text_loss,
        grad_image,
        grad_text,
    })
}
