//! Agreement and evaluation statistics: Pearson CC, CCC, mean absolute
//! change, skewness, pairwise agreement, and the cross-signal correlation
//! matrix.
//!
//! All moments are population (biased) moments so that `pearson`, `ccc`,
//! and `skewness` stay mutually consistent. Degenerate (zero-variance)
//! inputs never abort: they yield 0 with a flag so downstream fusion
//! weighting can proceed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalBundle;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },
    #[error("need at least 2 channels, got {0}")]
    NotEnoughChannels(usize),
    #[error("empty input")]
    Empty,
    #[error("channel error: {0}")]
    Signal(#[from] crate::signal::SignalError),
}

/// Per-combo inter-rater agreement: mean pairwise CC per subject plus the
/// mean and standard deviation across subjects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub combo_id: String,
    pub per_subject: BTreeMap<String, f64>,
    pub mu: f64,
    pub sd: f64,
}

/// Symmetric correlation matrix with unit diagonal, ordered by `names`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min_len {
        return Err(MetricsError::NotEnoughSamples {
            need: min_len,
            got: x.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Pearson correlation plus a degeneracy flag. Zero variance on either
/// side yields `(0.0, true)`.
pub fn pearson_flagged(x: &[f64], y: &[f64]) -> Result<(f64, bool), MetricsError> {
    check_pair(x, y, 2)?;
    let vx = variance(x);
    let vy = variance(y);
    if vx == 0.0 || vy == 0.0 {
        return Ok((0.0, true));
    }
    Ok((covariance(x, y) / (vx * vy).sqrt(), false))
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    Ok(pearson_flagged(x, y)?.0)
}

/// Concordance correlation coefficient:
/// `2 cov / (var_x + var_y + (mean_x - mean_y)^2)` with population moments.
/// Well-defined for constant inputs (numerator 0); both sides constant and
/// equal yields 0 by convention here.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y, 2)?;
    let num = 2.0 * covariance(x, y);
    let den = variance(x) + variance(y) + (mean(x) - mean(y)).powi(2);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Mean absolute first difference.
pub fn mean_absolute_change(x: &[f64]) -> Result<f64, MetricsError> {
    if x.len() < 2 {
        return Err(MetricsError::NotEnoughSamples {
            need: 2,
            got: x.len(),
        });
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64)
}

/// Fisher-Pearson population skewness `g1 = m3 / m2^(3/2)` plus a
/// degeneracy flag for zero-variance input.
pub fn skewness_flagged(x: &[f64]) -> Result<(f64, bool), MetricsError> {
    if x.len() < 3 {
        return Err(MetricsError::NotEnoughSamples {
            need: 3,
            got: x.len(),
        });
    }
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Ok((0.0, true));
    }
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    Ok((m3 / m2.powf(1.5), false))
}

pub fn skewness(x: &[f64]) -> Result<f64, MetricsError> {
    Ok(skewness_flagged(x)?.0)
}

/// Mean Pearson CC over all unordered pairs of the selected channels.
pub fn pairwise_agreement(bundle: &SignalBundle, names: &[&str]) -> Result<f64, MetricsError> {
    if names.len() < 2 {
        return Err(MetricsError::NotEnoughChannels(names.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let a = bundle.get(names[i])?;
            let b = bundle.get(names[j])?;
            total += pearson(&a.values, &b.values)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Collapses per-subject agreement values into mean and population
/// standard deviation across subjects.
pub fn aggregate_agreement(
    combo_id: impl Into<String>,
    per_subject: BTreeMap<String, f64>,
) -> Result<AgreementReport, MetricsError> {
    if per_subject.is_empty() {
        return Err(MetricsError::Empty);
    }
    let vals: Vec<f64> = per_subject.values().cloned().collect();
    let mu = mean(&vals);
    let sd = variance(&vals).sqrt();
    Ok(AgreementReport {
        combo_id: combo_id.into(),
        per_subject,
        mu,
        sd,
    })
}

/// Entry (i, j) is the mean over subjects of the within-subject Pearson CC
/// between channels i and j. Diagonal forced to exactly 1.
pub fn correlation_matrix(
    bundles: &[SignalBundle],
    names: &[&str],
) -> Result<CorrelationMatrix, MetricsError> {
    if bundles.is_empty() {
        return Err(MetricsError::Empty);
    }
    let k = names.len();
    let mut entries = vec![vec![0.0; k]; k];
    for i in 0..k {
        entries[i][i] = 1.0;
        for j in i + 1..k {
            let mut acc = 0.0;
            for b in bundles {
                let x = b.get(names[i])?;
                let y = b.get(names[j])?;
                acc += pearson(&x.values, &y.values)?;
            }
            let r = acc / bundles.len() as f64;
            entries[i][j] = r;
            entries[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: names.iter().map(|s| s.to_string()).collect(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeSeries;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_perfect_and_inverse() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_derived_value() {
        // Direct evaluation of the definition for [1,2,3,4] vs [1,2,3,5].
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 3.0, 5.0];
        let expected = covariance(&x, &y) / (variance(&x) * variance(&y)).sqrt();
        assert_abs_diff_eq!(expected, 0.982707629, epsilon = 1e-6);
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let (r, flag) = pearson_flagged(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, 0.0);
        assert!(flag);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ccc_values() {
        assert_abs_diff_eq!(
            ccc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            ccc(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // Hand value: cov 2/3, vars 2/3 each, mean diff 1 -> 4/3 / 7/3 = 4/7.
        assert_abs_diff_eq!(
            ccc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(),
            4.0 / 7.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mac_values() {
        assert_eq!(mean_absolute_change(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_absolute_change(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mean_absolute_change(&[0.0, 2.0, 1.0]).unwrap(), 1.5);
        assert!(mean_absolute_change(&[1.0]).is_err());
    }

    #[test]
    fn skewness_values() {
        // Symmetric sample.
        assert_abs_diff_eq!(
            skewness(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let (s, flag) = skewness_flagged(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(s, 0.0);
        assert!(flag);
        // m2 = 2/9, m3 = 2/27 -> 1/sqrt(2).
        assert_abs_diff_eq!(
            skewness(&[0.0, 0.0, 1.0]).unwrap(),
            1.0 / 2.0_f64.sqrt(),
            epsilon = 1e-9
        );
        assert!(skewness(&[1.0, 2.0]).is_err());
    }

    fn bundle(channels: &[(&str, Vec<f64>)]) -> SignalBundle {
        let mut b = SignalBundle::new("s1");
        for (name, v) in channels {
            b.insert(TimeSeries::new("s1", *name, 2.0, 0.0, v.clone()).unwrap())
                .unwrap();
        }
        b
    }

    #[test]
    fn pairwise_agreement_values() {
        let b = bundle(&[
            ("A1", vec![1.0, 2.0, 3.0]),
            ("A2", vec![1.0, 2.0, 3.0]),
            ("A3", vec![1.0, 2.0, 3.0]),
        ]);
        assert_abs_diff_eq!(
            pairwise_agreement(&b, &["A1", "A2", "A3"]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let b2 = bundle(&[("A1", vec![1.0, 2.0, 3.0]), ("A2", vec![-1.0, -2.0, -3.0])]);
        assert_abs_diff_eq!(
            pairwise_agreement(&b2, &["A1", "A2"]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(pairwise_agreement(&b2, &["A1"]).is_err());
    }

    #[test]
    fn aggregate_values() {
        let single: BTreeMap<String, f64> = [("s1".to_string(), 0.5)].into();
        let r = aggregate_agreement("A123", single).unwrap();
        assert_eq!(r.mu, 0.5);
        assert_eq!(r.sd, 0.0);

        let two: BTreeMap<String, f64> =
            [("s1".to_string(), 0.1), ("s2".to_string(), 0.3)].into();
        let r = aggregate_agreement("A123", two).unwrap();
        assert_abs_diff_eq!(r.mu, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.sd, 0.1, epsilon = 1e-12);

        let three: BTreeMap<String, f64> = [
            ("s1".to_string(), 0.1),
            ("s2".to_string(), 0.2),
            ("s3".to_string(), 0.6),
        ]
        .into();
        let r = aggregate_agreement("A123", three).unwrap();
        assert_abs_diff_eq!(r.mu, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(r.sd, (0.14f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!((r.sd - 0.2160).abs() < 1e-3);

        assert!(aggregate_agreement("A123", BTreeMap::new()).is_err());
    }

    #[test]
    fn correlation_matrix_basics() {
        let b = bundle(&[("A1", vec![1.0, 2.0, 3.0]), ("A2", vec![1.0, 2.0, 3.0])]);
        let m = correlation_matrix(&[b], &["A1", "A2"]).unwrap();
        assert_eq!(m.entries, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn correlation_matrix_averages_subjects() {
        // Two subjects with per-subject CCs 1.0 and -1.0 -> entry 0.0;
        // also verify against a brute-force recomputation.
        let b1 = bundle(&[("A1", vec![1.0, 2.0, 3.0]), ("A2", vec![1.0, 2.0, 3.0])]);
        let b2 = bundle(&[("A1", vec![1.0, 2.0, 3.0]), ("A2", vec![3.0, 2.0, 1.0])]);
        let m = correlation_matrix(&[b1.clone(), b2.clone()], &["A1", "A2"]).unwrap();
        let brute = (pearson(
            &b1.get("A1").unwrap().values,
            &b1.get("A2").unwrap().values,
        )
        .unwrap()
            + pearson(
                &b2.get("A1").unwrap().values,
                &b2.get("A2").unwrap().values,
            )
            .unwrap())
            / 2.0;
        assert_abs_diff_eq!(m.entries[0][1], brute, epsilon = 1e-12);
        assert_abs_diff_eq!(m.entries[0][1], 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            x in proptest::collection::vec(-10f64..10.0, 3..30),
            y in proptest::collection::vec(-10f64..10.0, 3..30),
            a in 0.1f64..5.0,
            b in -5f64..5.0,
        ) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            let (r1, d1) = pearson_flagged(x, y).unwrap();
            prop_assume!(!d1);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&xt, y).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn ccc_bounded_by_pearson_and_symmetric(
            x in proptest::collection::vec(-10f64..10.0, 3..30),
            y in proptest::collection::vec(-10f64..10.0, 3..30),
        ) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            let (r, deg) = pearson_flagged(x, y).unwrap();
            prop_assume!(!deg);
            let c = ccc(x, y).unwrap();
            prop_assert!(c.abs() <= r.abs() + 1e-12);
            prop_assert!((c - ccc(y, x).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn skewness_antisymmetric(
            x in proptest::collection::vec(-10f64..10.0, 3..30),
            c in -5f64..5.0,
        ) {
            let (s, deg) = skewness_flagged(&x).unwrap();
            prop_assume!(!deg);
            let mirrored: Vec<f64> = x.iter().map(|v| c - v).collect();
            prop_assert!((s + skewness(&mirrored).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn corr_matrix_symmetric_unit_diag(
            a in proptest::collection::vec(-10f64..10.0, 4..20),
            b in proptest::collection::vec(-10f64..10.0, 4..20),
            c in proptest::collection::vec(-10f64..10.0, 4..20),
        ) {
            let n = a.len().min(b.len()).min(c.len());
            let bun = bundle(&[
                ("A1", a[..n].to_vec()),
                ("A2", b[..n].to_vec()),
                ("A3", c[..n].to_vec()),
            ]);
            let m = correlation_matrix(&[bun], &["A1", "A2", "A3"]).unwrap();
            for i in 0..3 {
                prop_assert_eq!(m.entries[i][i], 1.0);
                for j in 0..3 {
                    prop_assert_eq!(m.entries[i][j], m.entries[j][i]);
                    prop_assert!(m.entries[i][j].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
