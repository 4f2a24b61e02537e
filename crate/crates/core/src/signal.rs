//! Core time-series type, resampling, smoothing, and normalization.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("empty time series")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("sampling rate must be positive, got {0}")]
    BadRate(f64),
    #[error("decimation factor {0} is not a positive integer (fs {1} Hz -> {2} Hz)")]
    NonIntegerDecimation(f64, f64, f64),
    #[error("input too short: {len} samples cannot fill one block of {block}")]
    TooShort { len: usize, block: usize },
    #[error("window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("polyorder {polyorder} must be smaller than window {window}")]
    OrderTooHigh { window: usize, polyorder: usize },
    #[error("window {window} exceeds series length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },
    #[error("invalid range: lo {0} must be below hi {1}")]
    BadRange(f64, f64),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("no channels selected")]
    NoChannels,
    #[error("channel {name:?} does not share the bundle grid (fs {fs}, t0 {t0}, len {len})")]
    GridMismatch {
        name: String,
        fs: f64,
        t0: f64,
        len: usize,
    },
    #[error("duplicate channel {0:?}")]
    DuplicateChannel(String),
}

/// One uniformly sampled real-valued channel. Implied timestamps are
/// `t0 + k / fs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub subject_id: String,
    pub name: String,
    pub fs: f64,
    pub t0: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        subject_id: impl Into<String>,
        name: impl Into<String>,
        fs: f64,
        t0: f64,
        values: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if !(fs > 0.0) {
            return Err(SignalError::BadRate(fs));
        }
        if values.is_empty() {
            return Err(SignalError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            name: name.into(),
            fs,
            t0,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp of sample `k`.
    pub fn timestamp(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    /// Same grid, new values (lengths must match).
    pub fn with_values(&self, name: impl Into<String>, values: Vec<f64>) -> TimeSeries {
        debug_assert_eq!(values.len(), self.values.len());
        TimeSeries {
            subject_id: self.subject_id.clone(),
            name: name.into(),
            fs: self.fs,
            t0: self.t0,
            values,
        }
    }
}

/// Named set of channels on a shared grid for one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalBundle {
    pub subject_id: String,
    pub channels: IndexMap<String, TimeSeries>,
}

impl SignalBundle {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            channels: IndexMap::new(),
        }
    }

    /// Inserts a channel, enforcing grid agreement with existing channels.
    pub fn insert(&mut self, ts: TimeSeries) -> Result<(), SignalError> {
        if self.channels.contains_key(&ts.name) {
            return Err(SignalError::DuplicateChannel(ts.name.clone()));
        }
        if let Some(first) = self.channels.values().next() {
            if ts.fs != first.fs || ts.t0 != first.t0 || ts.len() != first.len() {
                return Err(SignalError::GridMismatch {
                    name: ts.name.clone(),
                    fs: ts.fs,
                    t0: ts.t0,
                    len: ts.len(),
                });
            }
        }
        self.channels.insert(ts.name.clone(), ts);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TimeSeries, SignalError> {
        self.channels
            .get(name)
            .ok_or_else(|| SignalError::UnknownChannel(name.to_string()))
    }

    /// Grid length shared by all channels (0 for an empty bundle).
    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Anti-aliased decimation by block mean. `target_fs` must divide `fs`
/// evenly; the trailing partial block is dropped.
pub fn resample(ts: &TimeSeries, target_fs: f64) -> Result<TimeSeries, SignalError> {
    if !(target_fs > 0.0) {
        return Err(SignalError::BadRate(target_fs));
    }
    let factor = ts.fs / target_fs;
    let m = factor.round();
    if m < 1.0 || (factor - m).abs() > 1e-9 * factor.abs() {
        return Err(SignalError::NonIntegerDecimation(factor, ts.fs, target_fs));
    }
    let m = m as usize;
    let n_out = ts.len() / m;
    if n_out == 0 {
        return Err(SignalError::TooShort {
            len: ts.len(),
            block: m,
        });
    }
    let values = (0..n_out)
        .map(|k| ts.values[k * m..(k + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    Ok(TimeSeries {
        subject_id: ts.subject_id.clone(),
        name: ts.name.clone(),
        fs: target_fs,
        t0: ts.t0,
        values,
    })
}

/// Savitzky-Golay smoothing: each output sample is the value at its own
/// position of the least-squares polynomial of degree `polyorder` fitted
/// over the surrounding `window` samples. Near the edges the window is
/// truncated asymmetrically (no padding) and the fit degree capped at the
/// number of available points minus one.
pub fn savitzky_golay(
    ts: &TimeSeries,
    window: usize,
    polyorder: usize,
) -> Result<TimeSeries, SignalError> {
    let n = ts.len();
    if window % 2 == 0 {
        return Err(SignalError::EvenWindow(window));
    }
    if polyorder >= window {
        return Err(SignalError::OrderTooHigh { window, polyorder });
    }
    if window > n {
        return Err(SignalError::WindowTooLong { window, len: n });
    }
    let half = window / 2;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let npts = hi - lo;
        let degree = polyorder.min(npts - 1);
        out[i] = polyfit_eval_center(&ts.values[lo..hi], i as isize - lo as isize, degree);
    }
    Ok(ts.with_values(ts.name.clone(), out))
}

/// Fits a degree-`degree` polynomial to `y` (abscissae 0..len) by least
/// squares and evaluates it at `at`. Abscissae are centered on `at` so the
/// result is just the constant coefficient.
fn polyfit_eval_center(y: &[f64], at: isize, degree: usize) -> f64 {
    let n = y.len();
    let dim = degree + 1;
    // Normal equations A^T A c = A^T y with A[k][j] = (k - at)^j.
    let mut ata = vec![vec![0.0; dim]; dim];
    let mut aty = vec![0.0; dim];
    for (k, &yk) in y.iter().enumerate() {
        let x = k as isize - at;
        let mut pow = vec![1.0; 2 * dim - 1];
        for j in 1..2 * dim - 1 {
            pow[j] = pow[j - 1] * x as f64;
        }
        for r in 0..dim {
            for c in 0..dim {
                ata[r][c] += pow[r + c];
            }
            aty[r] += pow[r] * yk;
        }
    }
    debug_assert!(n > degree);
    solve_small(&mut ata, &mut aty)[0]
}

/// Gaussian elimination with partial pivoting for the small SPD systems
/// above. Returns the solution in place of `b`.
fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / diag;
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Result of [`znormalize`]: the standardized series plus the removed
/// statistics. `degenerate` is set for zero-variance inputs, which come
/// back as all zeros with `std` reported as 0.
#[derive(Debug, Clone)]
pub struct ZNormalized {
    pub series: TimeSeries,
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

/// Standardizes to sample mean 0 and population std 1.
pub fn znormalize(ts: &TimeSeries) -> Result<ZNormalized, SignalError> {
    let n = ts.len();
    if n < 2 {
        return Err(SignalError::NotEnoughSamples { need: 2, got: n });
    }
    let mean = ts.values.iter().sum::<f64>() / n as f64;
    let var = ts.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(ZNormalized {
            series: ts.with_values(ts.name.clone(), vec![0.0; n]),
            mean,
            std: 0.0,
            degenerate: true,
        });
    }
    let values = ts.values.iter().map(|v| (v - mean) / std).collect();
    Ok(ZNormalized {
        series: ts.with_values(ts.name.clone(), values),
        mean,
        std,
        degenerate: false,
    })
}

/// Affine rescale mapping min to `lo` and max to `hi`. Constant input maps
/// to the midpoint.
pub fn minmax_scale(ts: &TimeSeries, lo: f64, hi: f64) -> Result<TimeSeries, SignalError> {
    if lo >= hi {
        return Err(SignalError::BadRange(lo, hi));
    }
    let min = ts.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ts.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if min == max {
        vec![(lo + hi) / 2.0; ts.len()]
    } else {
        ts.values
            .iter()
            .map(|v| lo + (v - min) / (max - min) * (hi - lo))
            .collect()
    };
    Ok(ts.with_values(ts.name.clone(), values))
}

/// Pointwise arithmetic mean of the selected channels.
pub fn mean_signal(bundle: &SignalBundle, names: &[&str]) -> Result<TimeSeries, SignalError> {
    if names.is_empty() {
        return Err(SignalError::NoChannels);
    }
    let first = bundle.get(names[0])?;
    let mut acc = vec![0.0; first.len()];
    for name in names {
        let ch = bundle.get(name)?;
        for (a, v) in acc.iter_mut().zip(&ch.values) {
            *a += v;
        }
    }
    let k = names.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(first.with_values("MEAN", acc))
}
