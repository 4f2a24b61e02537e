//! CCC loss (1 - CCC) with its analytic gradient.

use super::ModelError;

/// Loss value, gradient with respect to the predictions, and a flag for
/// the degenerate case of both sides constant (loss pinned at 1, zero
/// gradient).
pub struct CccLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub degenerate: bool,
}

/// `1 - ccc(pred, target)` over the concatenated batch, with population
/// moments matching [`crate::metrics::ccc`].
pub fn ccc_loss(pred: &[f64], target: &[f64]) -> Result<CccLoss, ModelError> {
    if pred.len() != target.len() {
        return Err(ModelError::LengthMismatch(pred.len(), target.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(ModelError::NotEnoughSamples(n));
    }
    let nf = n as f64;
    let mp = pred.iter().sum::<f64>() / nf;
    let mt = target.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (p, t) in pred.iter().zip(target) {
        cov += (p - mp) * (t - mt);
        vp += (p - mp) * (p - mp);
        vt += (t - mt) * (t - mt);
    }
    cov /= nf;
    vp /= nf;
    vt /= nf;

    let num = 2.0 * cov;
    let den = vp + vt + (mp - mt).powi(2);
    if den == 0.0 {
        return Ok(CccLoss {
            value: 1.0,
            grad: vec![0.0; n],
            degenerate: true,
        });
    }
    let ccc = num / den;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let dnum = 2.0 * (t - mt) / nf;
            let dden = (2.0 * (p - mp) + 2.0 * (mp - mt)) / nf;
            -(dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok(CccLoss {
        value: 1.0 - ccc,
        grad,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn loss_values() {
        let l = ccc_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(l.value, 0.0, epsilon = 1e-12);

        let l = ccc_loss(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(l.value, 1.0, epsilon = 1e-12);

        // 1 - 4/7 from the ccc hand value.
        let l = ccc_loss(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(l.value, 3.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_both_constant() {
        let l = ccc_loss(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.value, 1.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));

        // Equal-but-offset constants are not degenerate: den is the mean
        // gap squared, ccc = 0, and the gradient is still zero.
        let l = ccc_loss(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(!l.degenerate);
        assert_eq!(l.value, 1.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ccc_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(ccc_loss(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = [0.3, -0.7, 1.2, 0.1, -0.4];
        let target = [0.2, -0.5, 0.9, 0.3, -0.6];
        let l = ccc_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for k in 0..pred.len() {
            let mut plus = pred;
            plus[k] += h;
            let mut minus = pred;
            minus[k] -= h;
            let fd = (ccc_loss(&plus, &target).unwrap().value
                - ccc_loss(&minus, &target).unwrap().value)
                / (2.0 * h);
            assert_abs_diff_eq!(l.grad[k], fd, epsilon = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn loss_bounded(
            p in proptest::collection::vec(-10f64..10.0, 2..40),
            t in proptest::collection::vec(-10f64..10.0, 2..40),
        ) {
            let n = p.len().min(t.len());
            let l = ccc_loss(&p[..n], &t[..n]).unwrap();
            prop_assert!(l.value >= -1e-12 && l.value <= 2.0 + 1e-12);
        }
    }
}
