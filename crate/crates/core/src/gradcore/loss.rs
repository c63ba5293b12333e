use crate::error::NetError;
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
///
/// Uses the max-shifted log-sum-exp, so saturated logits do not overflow.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), NetError> {
    let shape = logits.shape();
    let (batch, classes) = match *shape {
        [b, c] => (b, c),
        _ => {
            return Err(NetError::BatchShape {
                expected: vec![0, 0],
                found: shape.to_vec(),
            })
        }
    };
    if labels.len() != batch {
        return Err(NetError::LabelCount {
            labels: labels.len(),
            batch,
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(NetError::LabelOutOfRange { index, label, classes });
    }
    let inv_batch = T::one() / T::of(batch as f64);
    let mut grad = vec![T::zero(); batch * classes];
    let mut total = T::zero();
    for (b, (row, &label)) in logits.data().chunks(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = row.iter().fold(T::zero(), |acc, &z| acc + (z - max).exp());
        let log_sum = sum.ln();
        total += log_sum - (row[label] - max);
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (j, (gv, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - max).exp() / sum;
            let target = if j == label { T::one() } else { T::zero() };
            *gv = (p - target) * inv_batch;
        }
    }
    Ok((total * inv_batch, Tensor::new(vec![batch, classes], grad)?))
}
