use super::Tensor;

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.shape()[0];
    assert_eq!(n, labels.len(), "one label per batch item");
    let k = logits.item_len();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        assert!(label < k, "label {label} out of range");
        let z = logits.item(b);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[label];
        let g = grad.item_mut(b);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = ((z[j] - lse).exp() - f64::from(j == label)) / n as f64;
        }
    }
    (total / n as f64, grad)
}

/// Mean squared error over every element and its gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape());
    let count = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        total += d * d;
        *g = 2.0 * d / count;
    }
    (total / count, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric, rel_err};

    #[test]
    fn uniform_logits_give_ln_k() {
        let (l, _) = cross_entropy(&Tensor::from_vec([2, 9, 1, 1, 1], vec![0.3; 18]), &[0, 5]);
        assert!((l - 9f64.ln()).abs() < 1e-12);
        assert!((l - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = Tensor::from_vec([2, 3, 1, 1, 1], vec![0.5, -1.0, 2.0, 0.0, 0.1, -0.3]);
        let labels = [2, 0];
        let (_, g) = cross_entropy(&z, &labels);
        for i in 0..z.len() {
            let n = numeric(&z, i, 1e-6, |zz| cross_entropy(zz, &labels).0);
            assert!(rel_err(g.data()[i], n) < 1e-6);
        }
        let t = Tensor::from_vec([2, 3, 1, 1, 1], vec![0.0; 6]);
        let (_, g) = mse(&z, &t);
        for i in 0..z.len() {
            let n = numeric(&z, i, 1e-6, |zz| mse(zz, &t).0);
            assert!(rel_err(g.data()[i], n) < 1e-6);
        }
    }

    #[test]
    fn argmax_ties_and_shift_invariance() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 9]), 0);
        let z = [0.1, -2.0, 0.7, 0.7];
        let shifted: Vec<f64> = z.iter().map(|v| v + 100.0).collect();
        assert_eq!(argmax(&z), argmax(&shifted));
    }
}
