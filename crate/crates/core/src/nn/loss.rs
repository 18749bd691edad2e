//! Soft-label cross-entropy with log-sum-exp stabilisation.

use alloc::format;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::{Error, Result};

fn check(logits: &Tensor<impl Scalar>, labels: &[f32]) -> Result<(usize, usize)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] * shape[1] != labels.len() {
        return Err(Error::Shape(format!(
            "logits {shape:?} vs {} label entries",
            labels.len()
        )));
    }
    if logits.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok((shape[0], shape[1]))
}

/// Row-wise `log softmax` in f64.
pub fn log_softmax_row<S: Scalar>(row: &[S], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let sum: f64 = row.iter().map(|v| libm::exp(v.as_f64() - max)).sum();
    let lse = max + libm::log(sum);
    for (o, v) in out.iter_mut().zip(row) {
        *o = v.as_f64() - lse;
    }
}

/// Per-row losses `-sum_c y_c log softmax(z)_c`, accumulated in f64.
pub fn soft_ce_rows<S: Scalar>(logits: &Tensor<S>, labels: &[f32]) -> Result<Vec<f64>> {
    let (batch, classes) = check(logits, labels)?;
    let mut ls = alloc::vec![0.0f64; classes];
    Ok((0..batch)
        .map(|b| {
            log_softmax_row(logits.row(b), &mut ls);
            -labels[b * classes..(b + 1) * classes]
                .iter()
                .zip(&ls)
                .map(|(&y, &l)| if y == 0.0 { 0.0 } else { y as f64 * l })
                .sum::<f64>()
        })
        .collect())
}

/// Mean soft-label cross-entropy over the batch.
pub fn soft_ce_loss<S: Scalar>(logits: &Tensor<S>, labels: &[f32]) -> Result<f64> {
    let rows = soft_ce_rows(logits, labels)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Loss and its gradient with respect to the logits, `(softmax - y) / B`.
pub fn soft_ce_with_grad<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[f32],
) -> Result<(f64, Tensor<S>)> {
    let (batch, classes) = check(logits, labels)?;
    let mut ls = alloc::vec![0.0f64; classes];
    let mut grad = Tensor::zeros(alloc::vec![batch, classes]);
    let mut total = 0.0;
    let inv_b = 1.0 / batch as f64;
    for b in 0..batch {
        log_softmax_row(logits.row(b), &mut ls);
        let y = &labels[b * classes..(b + 1) * classes];
        let g = &mut grad.values_mut()[b * classes..(b + 1) * classes];
        for c in 0..classes {
            let yc = y[c] as f64;
            if yc != 0.0 {
                total -= yc * ls[c];
            }
            g[c] = S::of((libm::exp(ls[c]) - yc) * inv_b);
        }
    }
    Ok((total * inv_b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(b: usize, c: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![b, c], v).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = t(2, 5, vec![0.3; 10]);
        let labels = [0.2, 0.2, 0.2, 0.2, 0.2, 0.0, 1.0, 0.0, 0.0, 0.0];
        let l = soft_ce_loss(&logits, &labels).unwrap();
        // labels are f32, so the target mass is only 1 up to rounding
        let mass: f64 = labels.iter().map(|&v: &f32| v as f64).sum::<f64>() / 2.0;
        assert!((l - mass * libm::log(5.0)).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        let mut v = vec![0.0; 10];
        v[3] = 30.0;
        let mut y = [0.0f32; 10];
        y[3] = 1.0;
        assert!(soft_ce_loss(&t(1, 10, v), &y).unwrap() < 1e-9);
    }

    #[test]
    fn loss_is_linear_in_target() {
        let logits = t(1, 4, vec![0.5, -1.0, 2.0, 0.1]);
        let a = soft_ce_loss(&logits, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = soft_ce_loss(&logits, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let m = soft_ce_loss(&logits, &[0.5, 0.0, 0.5, 0.0]).unwrap();
        assert!((m - (0.5 * a + 0.5 * b)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let logits = t(1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(
            soft_ce_loss(&logits, &[1.0, 0.0]),
            Err(Error::Numeric(_))
        ));
        let logits = t(1, 2, vec![0.0, 0.0]);
        assert!(matches!(
            soft_ce_loss(&logits, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = t(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
        let (_, g) = soft_ce_with_grad(&logits, &[0.0, 1.0, 0.0, 0.3, 0.7, 0.0]).unwrap();
        for b in 0..2 {
            assert!(g.row(b).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
