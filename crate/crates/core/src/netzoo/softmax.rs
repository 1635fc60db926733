use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Softmax over `logits ⊕ [0]`: K free logits plus one logit pinned at zero.
/// The last entry is the fake-class probability.
pub fn overparam_softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("logit {v}")));
    }
    Ok(overparam_softmax_unchecked(logits))
}

pub(crate) fn overparam_softmax_unchecked<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::zero(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    out.push((-max).exp());
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Plain softmax of a row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Row-wise plain softmax.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = softmax(row.as_slice().expect("standard layout"));
        row.iter_mut().zip(s).for_each(|(r, v)| *r = v);
    }
    out
}

/// Row-wise over-parameterized softmax; output has one more column.
pub fn overparam_softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let (n, k) = logits.dim();
    let mut out = Array2::zeros((n, k + 1));
    for (src, mut dst) in logits.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let row: Vec<T> = src.iter().copied().collect();
        dst.iter_mut().zip(overparam_softmax_unchecked(&row)).for_each(|(d, v)| *d = v);
    }
    out
}

/// Pulls a gradient w.r.t. softmax probabilities back to the logits.
pub fn softmax_backward<T: Scalar>(probs: ArrayView2<T>, grad_probs: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut o) in probs.axis_iter(Axis(0)).zip(grad_probs.axis_iter(Axis(0))).zip(out.axis_iter_mut(Axis(0))) {
        let dot: T = p.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        for ((o, &pi), &gi) in o.iter_mut().zip(p.iter()).zip(g.iter()) {
            *o = pi * (gi - dot);
        }
    }
    out
}
