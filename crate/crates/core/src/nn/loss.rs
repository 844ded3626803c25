use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct SoftmaxXent<T> {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / B`
    pub grad: Tensor<T>,
}

/// Softmax over each row of `B x M` logits followed by mean cross-entropy.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxXent<T>> {
    let &[b, m] = logits.dims() else {
        return Err(Error::geometry("softmax_xent", "logits must be B x M"));
    };
    if labels.len() != b {
        return Err(Error::InvalidArgument(format!(
            "softmax_xent: {} labels for {b} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::InvalidArgument(format!(
            "softmax_xent: label {bad} out of range for {m} classes"
        )));
    }
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (row, &label) in probs.data_mut().chunks_exact_mut(m).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let shifted = row[label] - max;
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        // log space, so tiny probabilities do not underflow to ln(0)
        let log_p = (shifted - z.ln()).to_f64();
        loss -= log_p;
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    loss /= b as f64;
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = probs.clone();
    for (row, &label) in grad.data_mut().chunks_exact_mut(m).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok(SoftmaxXent { loss, probs, grad })
}
