use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of a `B x K` tensor.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean negative log-likelihood of `labels` under a row-wise softmax, and
/// its gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [b, k] = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for logits {:?}", labels.len(), logits.shape())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} is out of range for {k} classes")));
    }
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut grad = vec![T::zero(); b * k];
    let mut total = T::zero();
    for ((row, g), &label) in logits.data().chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        let (arg, m) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |(ai, am), (i, v)| if v > am { (i, v) } else { (ai, am) });
        // -log p = (m - x_label) + ln(1 + sum of the non-max terms)
        let mut rest = T::zero();
        for (i, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            g[i] = e;
            if i != arg {
                rest += e;
            }
        }
        total += (m - row[label]) + rest.ln_1p();
        let sum = T::one() + rest;
        for (i, gi) in g.iter_mut().enumerate() {
            let p = *gi / sum;
            *gi = (p - if i == label { T::one() } else { T::zero() }) * inv_b;
        }
    }
    Ok((total * inv_b, Tensor::new(vec![b, k], grad)?))
}
