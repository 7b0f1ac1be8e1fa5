//! Classification losses with mean reduction over the batch.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, validation_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy on a single logit per sample.
    Bce,
    /// Softmax cross-entropy over `C` logits per sample.
    CrossEntropy,
}

impl LossKind {
    /// Evaluates the loss on integer labels and returns `(loss, dlogits)`.
    pub fn evaluate<T: Scalar>(
        self,
        logits: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(T, Tensor<T>)> {
        match self {
            LossKind::Bce => {
                let targets = labels
                    .iter()
                    .map(|&l| match l {
                        0 => Ok(T::zero()),
                        1 => Ok(T::one()),
                        other => Err(validation_err!("binary target must be 0 or 1, got {other}")),
                    })
                    .collect::<Result<Vec<T>>>()?;
                let targets = Tensor::from_vec(&[labels.len().max(1), 1], targets)
                    .map_err(|_| shape_err!("empty batch"))?;
                bce_with_logits(logits, &targets)
            }
            LossKind::CrossEntropy => cross_entropy(logits, labels),
        }
    }
}

/// Mean of `max(z, 0) - z t + log(1 + e^{-|z|})` over `[N, 1]` logits.
/// Gradient is `(sigmoid(z) - t) / N`.
pub fn bce_with_logits<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let &[n, 1] = logits.dims() else {
        return Err(shape_err!(
            "bce expects [N, 1] logits, got {}",
            logits.shape()
        ));
    };
    if targets.dims() != logits.dims() {
        return Err(shape_err!(
            "bce targets {} do not match logits {}",
            targets.shape(),
            logits.shape()
        ));
    }
    if let Some(t) = targets
        .data()
        .iter()
        .find(|&&t| t != T::zero() && t != T::one())
    {
        return Err(validation_err!("binary target must be 0 or 1, got {t}"));
    }
    let nf = T::from_usize(n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n);
    for (&z, &t) in logits.data().iter().zip(targets.data()) {
        total = total + z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - t) / nf);
    }
    Ok((total / nf, Tensor::from_vec(&[n, 1], grad)?))
}

/// Mean of `-log softmax(z)[label]` over `[N, C]` logits, computed with
/// max-subtracted log-sum-exp. Gradient is `(softmax(z) - onehot) / N`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let &[n, c] = logits.dims() else {
        return Err(shape_err!(
            "cross entropy expects [N, C] logits, got {}",
            logits.shape()
        ));
    };
    if labels.len() != n {
        return Err(shape_err!("{} labels for {n} rows of logits", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(validation_err!("label {bad} out of range for {c} classes"));
    }
    let nf = T::from_usize(n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let lse = max + sum.ln();
        total = total + lse - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let onehot = if j == label { T::one() } else { T::zero() };
            grad.push((p - onehot) / nf);
        }
    }
    Ok((total / nf, Tensor::from_vec(&[n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn bce_reference_points() {
        let (l, _) = bce_with_logits(&col(&[0.0]), &col(&[1.0])).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        let (l, g) = bce_with_logits(&col(&[100.0]), &col(&[1.0])).unwrap();
        assert!(l.abs() < 1e-40 && g.is_finite());
        let (l, _) = bce_with_logits(&col(&[-100.0]), &col(&[1.0])).unwrap();
        assert!((l - 100.0).abs() < 1e-9);
        let (l, _) = bce_with_logits(
            &Tensor::<f32>::from_vec(&[1, 1], alloc::vec![-100.0]).unwrap(),
            &Tensor::from_vec(&[1, 1], alloc::vec![1.0]).unwrap(),
        )
        .unwrap();
        assert!((l - 100.0).abs() < 1e-4);
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let err = bce_with_logits(&col(&[0.0]), &col(&[0.5])).unwrap_err();
        assert!(matches!(err, crate::Error::Validation(_)));
        assert!(LossKind::Bce.evaluate(&col(&[0.0]), &[2]).is_err());
    }

    #[test]
    fn cross_entropy_reference_points() {
        let z = Tensor::<f64>::zeros(&[1, 4]).unwrap();
        let (l, _) = cross_entropy(&z, &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let z = Tensor::<f32>::from_vec(&[1, 4], alloc::vec![1e6, 0.0, 0.0, 0.0]).unwrap();
        let (l, g) = cross_entropy(&z, &[0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.is_finite());
        assert!(matches!(
            cross_entropy(&z, &[4]),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn gradients_sum_to_zero_per_row() {
        let z =
            Tensor::<f64>::from_vec(&[2, 3], alloc::vec![0.1, -2.0, 3.0, 1.0, 1.0, 0.0]).unwrap();
        let (_, g) = cross_entropy(&z, &[2, 0]).unwrap();
        for row in g.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
