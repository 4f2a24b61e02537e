//! Windowing of feature/label sequences for training.

use ndarray::Array2;

use super::{DatasetError, FeatureMatrix};
use crate::signal::TimeSeries;

/// One training window: a feature slice and the matching label slice.
/// Windows never cross subject boundaries.
#[derive(Debug, Clone)]
pub struct Window {
    pub subject_id: String,
    pub start: usize,
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Window start/length schedule for a sequence of `t` steps.
///
/// Full windows start at 0, hop, 2*hop, ... while they fit. If the last
/// full window does not reach the end, one overlapping tail window of at
/// least 2 steps is appended so no data is discarded. Inputs shorter than
/// `win` yield a single full-length window.
pub fn window_starts(t: usize, win: usize, hop: usize) -> Vec<(usize, usize)> {
    assert!(win > 0 && hop > 0);
    if t <= win {
        return vec![(0, t)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + win <= t {
        out.push((start, win));
        start += hop;
    }
    let last_end = out.last().map(|(s, l)| s + l).unwrap_or(0);
    if last_end < t && t > start && t - start >= 2 {
        out.push((start, t - start));
    }
    out
}

/// Slices a feature matrix and label series into training windows.
pub fn segment(
    features: &FeatureMatrix,
    labels: &TimeSeries,
    win: usize,
    hop: usize,
) -> Result<Vec<Window>, DatasetError> {
    if features.rows() != labels.len() {
        return Err(DatasetError::RowMismatch {
            features: features.rows(),
            labels: labels.len(),
        });
    }
    Ok(segment_matrix(
        &features.subject_id,
        &features.values,
        &labels.values,
        win,
        hop,
    ))
}

/// Windowing on raw arrays; `labels` may be shorter-lived borrows of the
/// gold-standard values.
pub fn segment_matrix(
    subject_id: &str,
    features: &Array2<f64>,
    labels: &[f64],
    win: usize,
    hop: usize,
) -> Vec<Window> {
    debug_assert_eq!(features.nrows(), labels.len());
    window_starts(labels.len(), win, hop)
        .into_iter()
        .map(|(start, len)| Window {
            subject_id: subject_id.to_string(),
            start,
            features: features
                .slice(ndarray::s![start..start + len, ..])
                .to_owned(),
            labels: labels[start..start + len].to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeSeries;

    fn fixture(t: usize, d: usize) -> (FeatureMatrix, TimeSeries) {
        let features = FeatureMatrix {
            subject_id: "s1".into(),
            set_name: "f".into(),
            fs: 2.0,
            values: Array2::from_shape_fn((t, d), |(i, j)| (i * d + j) as f64),
        };
        let labels =
            TimeSeries::new("s1", "GOLD", 2.0, 0.0, (0..t).map(|i| i as f64).collect()).unwrap();
        (features, labels)
    }

    #[test]
    fn tiles_700_with_nine_full_windows() {
        let (f, l) = fixture(700, 3);
        let ws = segment(&f, &l, 300, 50).unwrap();
        assert_eq!(ws.len(), 9);
        for (k, w) in ws.iter().enumerate() {
            assert_eq!(w.start, k * 50);
            assert_eq!(w.len(), 300);
        }
    }

    #[test]
    fn short_input_yields_single_window() {
        let (f, l) = fixture(100, 2);
        let ws = segment(&f, &l, 300, 50).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].start, 0);
        assert_eq!(ws[0].len(), 100);
    }

    #[test]
    fn keeps_overlapping_tail_window() {
        let (f, l) = fixture(301, 2);
        let ws = segment(&f, &l, 300, 50).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!((ws[0].start, ws[0].len()), (0, 300));
        assert_eq!((ws[1].start, ws[1].len()), (50, 251));
    }

    #[test]
    fn windows_carry_matching_slices() {
        let (f, l) = fixture(310, 2);
        let ws = segment(&f, &l, 300, 50).unwrap();
        for w in &ws {
            assert_eq!(w.features.nrows(), w.labels.len());
            assert_eq!(w.labels[0], w.start as f64);
            assert_eq!(w.features[[0, 0]], (w.start * 2) as f64);
        }
    }

    #[test]
    fn rejects_row_mismatch() {
        let (f, _) = fixture(100, 2);
        let l = TimeSeries::new("s1", "GOLD", 2.0, 0.0, vec![0.0; 99]).unwrap();
        assert!(matches!(
            segment(&f, &l, 300, 50),
            Err(DatasetError::RowMismatch { .. })
        ));
    }

    #[test]
    fn windows_cover_everything_and_hop_uniformly() {
        for t in [5usize, 299, 300, 301, 350, 600, 700, 1234] {
            let starts = window_starts(t, 300, 50);
            let mut covered = vec![false; t];
            for &(s, l) in &starts {
                for c in covered.iter_mut().skip(s).take(l) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "t = {t} not fully covered");
            for pair in starts.windows(2) {
                assert_eq!(pair[1].0 - pair[0].0, 50, "t = {t}");
            }
        }
    }
}
