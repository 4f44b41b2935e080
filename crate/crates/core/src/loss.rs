//! Categorical cross-entropy over soft targets.

use alloc::format;

use crate::error::{Error, Result};
use crate::scalar::{c, Element};
use crate::tensor::Tensor;
use crate::tape::Var;

/// Tolerance on the row sums of a target distribution.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-4;

/// Returns the batch-mean loss and the softmax of `logits`.
pub(crate) fn cross_entropy_forward<T: Element>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let (b, k) = logits.dims2("cross_entropy")?;
    if targets.shape() != logits.shape() {
        return Err(Error::shape("cross_entropy", logits.shape(), targets.shape()));
    }
    for (i, row) in targets.data().chunks(k).enumerate() {
        let total: T = row.iter().copied().sum();
        if row.iter().any(|&t| t < T::zero() || !t.is_finite())
            || (total.as_f64() - 1.0).abs() > TARGET_SUM_TOLERANCE
        {
            return Err(Error::Contract(format!(
                "target row {i} is not a probability distribution"
            )));
        }
    }
    let probs = logits.softmax_lastdim();
    let mut total = T::zero();
    for (lrow, trow) in logits.data().chunks(k).zip(targets.data().chunks(k)) {
        let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + lrow.iter().map(|&v| (v - max).exp_m()).sum::<T>().ln_m();
        for (&l, &t) in lrow.iter().zip(trow) {
            if t != T::zero() {
                total = total - t * (l - lse);
            }
        }
    }
    Ok((total / c(b as f64), probs))
}

/// Plain-value cross-entropy, for evaluation code that has no tape.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    cross_entropy_forward(logits, targets).map(|(loss, _)| loss)
}

/// Differentiable cross-entropy; see [`Var::cross_entropy`].
pub fn cross_entropy_var<'t, T: Element>(
    logits: Var<'t, T>,
    targets: &Tensor<T>,
) -> Result<Var<'t, T>> {
    logits.cross_entropy(targets)
}

/// One-hot rows for hard labels.
pub fn one_hot<T: Element>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Tensor::new(
        &[labels.len(), classes],
        (0..labels.len() * classes)
            .map(|i| {
                if labels[i / classes] == i % classes {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect(),
    )
}
