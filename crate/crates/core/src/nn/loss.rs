use super::ops::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean negative log-likelihood over the counted rows.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits; zero on ignored rows.
    pub grad: Mat,
    pub count: usize,
}

/// Softmax cross entropy over rows whose label is `Some`.
pub fn cross_entropy_loss(logits: &Mat, labels: &[Option<usize>]) -> Result<LossOutput> {
    assert_eq!(logits.rows, labels.len(), "one label slot per row");
    let count = labels.iter().filter(|l| l.is_some()).count();
    if count == 0 {
        return Err(Error::Input("cross entropy over zero unmasked rows".into()));
    }
    let c = logits.cols;
    let mut grad = Mat::zeros(logits.rows, c);
    let mut total = 0.0;
    let inv = 1.0 / count as f64;
    for (r, label) in labels.iter().enumerate() {
        let Some(y) = *label else { continue };
        if y >= c {
            return Err(Error::Input(format!("label {y} out of range for {c} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = grad.row_mut(r);
        for k in 0..c {
            g[k] = (row[k] - log_z).exp() * inv;
        }
        g[y] -= inv;
    }
    Ok(LossOutput {
        loss: total * inv,
        grad,
        count,
    })
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let out = cross_entropy_loss(&Mat::zeros(2, 4), &[Some(1), Some(3)]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_goes_to_zero() {
        let logits = Mat::from_vec(1, 3, vec![0.0, 800.0, 0.0]);
        let out = cross_entropy_loss(&logits, &[Some(1)]).unwrap();
        assert!(out.loss.abs() < 1e-300);
        assert!(out.grad.data.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn all_rows_masked_is_an_error() {
        assert!(cross_entropy_loss(&Mat::zeros(2, 3), &[None, None]).is_err());
    }

    #[test]
    fn masked_rows_have_zero_gradient() {
        let logits = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = cross_entropy_loss(&logits, &[None, Some(0)]).unwrap();
        assert_eq!(out.grad.row(0), &[0.0, 0.0]);
        assert_eq!(out.count, 1);
    }

    // Reference values evaluated with 50-digit arithmetic (mpmath).
    #[test]
    fn matches_high_precision_reference() {
        let logits = Mat::from_vec(
            3,
            5,
            vec![0.3, -1.2, 2.5, 0.0, 0.7, -0.4, 0.9, -2.2, 1.1, 0.05, 1.5, 1.5, -0.3, -0.8, 2.0],
        );
        let out = cross_entropy_loss(&logits, &[Some(2), Some(0), Some(4)]).unwrap();
        assert!((out.loss - 1.192056730329059619206414).abs() < 1e-10);
        let want = [
            0.02670771840001061917388,
            0.005959297483793535862087,
            -0.09229581423415243141387,
            0.01978556442356424389233,
            0.03984323392678403248557,
            -0.3027090172377682503717,
            0.1123697009975753481306,
            0.005062165403143345349692,
            0.1372486627320721270086,
            0.04802848810497742988278,
            0.08515829686849880883999,
            0.08515829686849880883999,
            0.0140765717952066676972,
            0.008537872377438948276652,
            -0.1929310379096432336538,
        ];
        for (g, w) in out.grad.data.iter().zip(want) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn argmax_prefers_smallest_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
