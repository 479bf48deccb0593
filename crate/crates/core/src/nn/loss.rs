use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Matrix;

/// Cross-entropy of one row of logits against `label`. Writes the softmax
/// probabilities into `probs` and returns the loss in `f64`.
pub fn xent_row<T: Real>(logits: &[T], label: usize, probs: &mut [T]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.as_f64()));
    let mut sum = 0.0;
    for (p, &x) in probs.iter_mut().zip(logits) {
        let e = (x.as_f64() - max).exp();
        sum += e;
        *p = T::from_f64(e);
    }
    for p in probs.iter_mut() {
        *p = T::from_f64(p.as_f64() / sum);
    }
    max + sum.ln() - logits[label].as_f64()
}

/// Gradient of the mean loss w.r.t. one row of logits, given its softmax
/// probabilities and the number of rows in the mean.
pub fn xent_grad_row<T: Real>(probs: &[T], label: usize, count: usize, out: &mut [T]) {
    let scale = 1.0 / count as f64;
    for (j, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        let y = if j == label { 1.0 } else { 0.0 };
        *o = T::from_f64((p.as_f64() - y) * scale);
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean cross-entropy over the masked rows.
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    /// `∂loss/∂logits`; zero outside the mask.
    pub grad: Matrix<T>,
}

impl<T> LossOutput<T> {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Softmax cross-entropy averaged over rows where `mask` is set.
/// Per-row losses are summed in ascending row order.
pub fn softmax_xent<T: Real>(logits: &Matrix<T>, labels: &[u32], mask: &[bool]) -> Result<LossOutput<T>> {
    let n = logits.rows();
    if labels.len() != n {
        return Err(Error::dim("softmax_xent labels", n, labels.len()));
    }
    if mask.len() != n {
        return Err(Error::dim("softmax_xent mask", n, mask.len()));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut probs = vec![T::zero(); logits.cols()];
    let mut total = 0.0;
    let mut correct = 0;
    for v in (0..n).filter(|&v| mask[v]) {
        let label = labels[v] as usize;
        if label >= logits.cols() {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", logits.cols())));
        }
        total += xent_row(logits.row(v), label, &mut probs);
        if argmax(logits.row(v)) == label {
            correct += 1;
        }
        xent_grad_row(&probs, label, count, grad.row_mut(v));
    }
    let loss = if count == 0 { 0.0 } else { total / count as f64 };
    Ok(LossOutput {
        loss,
        correct,
        count,
        grad,
    })
}

/// Fraction of masked rows whose argmax matches the label.
pub fn accuracy<T: Real>(logits: &Matrix<T>, labels: &[u32], mask: &[bool]) -> f64 {
    let mut hit = 0usize;
    let mut count = 0usize;
    for v in (0..logits.rows()).filter(|&v| mask[v]) {
        count += 1;
        if argmax(logits.row(v)) == labels[v] as usize {
            hit += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        hit as f64 / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Matrix::<f64>::zeros(4, 5);
        let out = softmax_xent(&logits, &[0, 1, 2, 3], &[true; 4]).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Matrix::from_fn(3, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.3 - 0.5);
        let labels = [1, 3, 0];
        let mask = [true, false, true];
        let out = softmax_xent(&logits, &labels, &mask).unwrap();
        let eps = 1e-6;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.as_mut_slice()[i] += eps;
            let mut minus = logits.clone();
            minus.as_mut_slice()[i] -= eps;
            let fd = (softmax_xent(&plus, &labels, &mask).unwrap().loss
                - softmax_xent(&minus, &labels, &mask).unwrap().loss)
                / (2.0 * eps);
            assert!((fd - out.grad.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Matrix::from_vec(1, 2, vec![1000.0f32, -1000.0]).unwrap();
        let out = softmax_xent(&logits, &[1], &[true]).unwrap();
        assert!((out.loss - 2000.0).abs() < 1e-3);
        assert!(out.grad.all_finite());
    }

    #[test]
    fn rejects_bad_labels() {
        let logits = Matrix::<f32>::zeros(1, 2);
        assert!(softmax_xent(&logits, &[2], &[true]).is_err());
        assert!(softmax_xent(&logits, &[0, 1], &[true]).is_err());
    }
}
