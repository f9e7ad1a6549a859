use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};

/// Numerically stable softmax of a single row, in place.
pub(crate) fn softmax_in_place(mut row: ArrayViewMut1<'_, f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.mapv_inplace(|x| x / sum);
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for row in out.axis_iter_mut(Axis(0)) {
        softmax_in_place(row);
    }
    out
}

/// Pull a gradient w.r.t. row-softmax probabilities back to the logits:
/// `dS_ij = P_ij (dP_ij - sum_k P_ik dP_ik)`.
pub(crate) fn softmax_rows_backward(probs: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut o) in probs
        .axis_iter(Axis(0))
        .zip(grad.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let dot = p.dot(&g);
        o.assign(&(&p * &(&g - dot)));
    }
    out
}

/// log-sum-exp of a row, with max subtraction.
pub(crate) fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one_and_resist_overflow() {
        let p = softmax_rows(&array![[1000.0, 1001.0], [-5.0, -5.0]]);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 0.5).abs() < 1e-15);
        assert!(p[[0, 1]] > p[[0, 0]]);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let upstream = array![[1.0, -2.0, 0.5], [0.25, 0.0, 3.0]];
        let f = |s: &Array2<f64>| (softmax_rows(s) * &upstream).sum();
        let analytic = softmax_rows_backward(&softmax_rows(&logits), &upstream);
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus[[i, j]] += eps;
                let mut minus = logits.clone();
                minus[[i, j]] -= eps;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * eps);
                assert!((numeric - analytic[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let row = array![1000.0, 1000.0];
        assert!((log_sum_exp(row.view()) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
