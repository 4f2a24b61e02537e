//! Temporal alignment: banded dynamic time warping and an iterative
//! multi-sequence scheme that warps each channel against an evolving mean
//! reference to compensate annotator delay.
//!
//! Channels are z-normalized up front, so the spatial half of canonical
//! time warping degenerates to per-channel standardization and only the
//! temporal correspondence is solved iteratively.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricsError};
use crate::signal::{self, SignalBundle, SignalError};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("empty input sequence")]
    Empty,
    #[error("band half-width {band} too narrow for lengths {nx} and {ny}")]
    BandTooNarrow { band: usize, nx: usize, ny: usize },
    #[error("invalid warp path: {0}")]
    InvalidPath(String),
    #[error("need at least 2 channels, got {0}")]
    NotEnoughChannels(usize),
    #[error("all selected channels are degenerate (zero variance)")]
    AllDegenerate,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Monotone step-constrained correspondence between two sequences.
/// Starts at (0, 0), ends at (Nx-1, Ny-1); each step increments i, j, or
/// both by exactly 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    /// Diagonal identity path for equal-length sequences.
    pub fn identity(len: usize) -> Self {
        WarpPath {
            pairs: (0..len).map(|k| (k, k)).collect(),
        }
    }

    /// Checks boundary, monotonicity, and step-size invariants against the
    /// given sequence lengths.
    pub fn validate(&self, nx: usize, ny: usize) -> Result<(), AlignmentError> {
        let bad = |msg: String| Err(AlignmentError::InvalidPath(msg));
        match self.pairs.first() {
            Some(&(0, 0)) => {}
            other => return bad(format!("must start at (0,0), got {other:?}")),
        }
        match self.pairs.last() {
            Some(&(i, j)) if i == nx - 1 && j == ny - 1 => {}
            other => return bad(format!("must end at ({},{}), got {other:?}", nx - 1, ny - 1)),
        }
        for w in self.pairs.windows(2) {
            let (i0, j0) = w[0];
            let (i1, j1) = w[1];
            let di = i1 as isize - i0 as isize;
            let dj = j1 as isize - j0 as isize;
            let ok = (di == 0 || di == 1) && (dj == 0 || dj == 1) && (di, dj) != (0, 0);
            if !ok {
                return bad(format!("illegal step ({i0},{j0}) -> ({i1},{j1})"));
            }
        }
        Ok(())
    }
}

/// Outcome of [`ctw_align`]: the warped bundle plus per-channel paths and
/// convergence/agreement diagnostics.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub aligned: SignalBundle,
    pub paths: IndexMap<String, WarpPath>,
    pub iterations: usize,
    pub converged: bool,
    pub pre_agreement: f64,
    pub post_agreement: f64,
    /// Channels with zero variance, passed through unwarped.
    pub degenerate: Vec<String>,
}

/// Banded DTW minimizing total `|x[i] - y[j]|`. `band` is the Sakoe-Chiba
/// half-width `|i - j| <= band`; `None` means unconstrained. Backtracking
/// ties break diagonal > vertical > horizontal.
pub fn dtw(
    x: &[f64],
    y: &[f64],
    band: Option<usize>,
) -> Result<(WarpPath, f64), AlignmentError> {
    let nx = x.len();
    let ny = y.len();
    if nx == 0 || ny == 0 {
        return Err(AlignmentError::Empty);
    }
    let band = band.unwrap_or(nx.max(ny));
    if band < nx.abs_diff(ny) {
        return Err(AlignmentError::BandTooNarrow { band, nx, ny });
    }

    let mut cost = vec![f64::INFINITY; nx * ny];
    let idx = |i: usize, j: usize| i * ny + j;
    for i in 0..nx {
        let lo = i.saturating_sub(band);
        let hi = (i + band + 1).min(ny);
        for j in lo..hi {
            let d = (x[i] - y[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(cost[idx(i - 1, j - 1)]);
                }
                if i > 0 {
                    b = b.min(cost[idx(i - 1, j)]);
                }
                if j > 0 {
                    b = b.min(cost[idx(i, j - 1)]);
                }
                b
            };
            cost[idx(i, j)] = d + best;
        }
    }

    let total = cost[idx(nx - 1, ny - 1)];
    debug_assert!(total.is_finite());

    // Backtrack, preferring diagonal, then vertical (i-1), then horizontal.
    let mut pairs = vec![(nx - 1, ny - 1)];
    let (mut i, mut j) = (nx - 1, ny - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            cost[idx(i - 1, j - 1)]
        } else {
            f64::INFINITY
        };
        let vert = if i > 0 { cost[idx(i - 1, j)] } else { f64::INFINITY };
        let horiz = if j > 0 { cost[idx(i, j - 1)] } else { f64::INFINITY };
        if diag <= vert && diag <= horiz {
            i -= 1;
            j -= 1;
        } else if vert <= horiz {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((WarpPath { pairs }, total))
}

/// Projects warped samples onto the reference grid: output j is the mean
/// of every `x[i]` paired with j. Validity of the path guarantees every
/// reference index is covered.
pub fn warp_to_reference(
    x: &[f64],
    path: &WarpPath,
    ref_len: usize,
) -> Result<Vec<f64>, AlignmentError> {
    path.validate(x.len(), ref_len)?;
    let mut sums = vec![0.0; ref_len];
    let mut counts = vec![0usize; ref_len];
    for &(i, j) in &path.pairs {
        sums[j] += x[i];
        counts[j] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

/// Configuration for [`ctw_align`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CtwConfig {
    /// DTW band half-width as a fraction of the sequence length.
    pub band_fraction: f64,
    pub max_iters: usize,
    /// Convergence threshold on the RMS change of the reference.
    pub tol: f64,
}

impl Default for CtwConfig {
    fn default() -> Self {
        Self {
            band_fraction: 0.1,
            max_iters: 10,
            tol: 1e-4,
        }
    }
}

/// Iterative multi-sequence alignment: z-normalize the selected channels,
/// then repeatedly warp each against the mean reference and recompute the
/// reference until it stops moving. Degenerate channels are excluded from
/// the reference and passed through unwarped.
///
/// Post-alignment agreement is reported, not guaranteed to improve.
pub fn ctw_align(
    bundle: &SignalBundle,
    names: &[&str],
    config: &CtwConfig,
) -> Result<AlignmentResult, AlignmentError> {
    if names.len() < 2 {
        return Err(AlignmentError::NotEnoughChannels(names.len()));
    }

    let mut znormed = SignalBundle::new(&bundle.subject_id);
    let mut degenerate = Vec::new();
    for name in names {
        let z = signal::znormalize(bundle.get(name)?)?;
        if z.degenerate {
            degenerate.push(name.to_string());
        }
        znormed.insert(z.series)?;
    }
    let active: Vec<&str> = names
        .iter()
        .filter(|n| !degenerate.iter().any(|d| d == *n))
        .cloned()
        .collect();
    if active.is_empty() {
        return Err(AlignmentError::AllDegenerate);
    }

    let t = znormed.len();
    let band = ((config.band_fraction * t as f64).ceil() as usize).max(1);
    let pre_agreement = metrics::pairwise_agreement(&znormed, names)?;

    let mut reference = signal::mean_signal(&znormed, &active)?.values;
    let mut warped: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut paths: IndexMap<String, WarpPath> = IndexMap::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        iterations += 1;
        for name in &active {
            let z = znormed.get(name)?;
            let (path, _) = dtw(&z.values, &reference, Some(band))?;
            let w = warp_to_reference(&z.values, &path, t)?;
            warped.insert(name.to_string(), w);
            paths.insert(name.to_string(), path);
        }
        let mut new_ref = vec![0.0; t];
        for w in warped.values() {
            for (r, v) in new_ref.iter_mut().zip(w) {
                *r += v;
            }
        }
        new_ref.iter_mut().for_each(|r| *r /= active.len() as f64);
        let rms = reference
            .iter()
            .zip(&new_ref)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / (t as f64).sqrt();
        reference = new_ref;
        if rms < config.tol {
            converged = true;
            break;
        }
    }

    let mut aligned = SignalBundle::new(&bundle.subject_id);
    for name in names {
        let z = znormed.get(name)?;
        if degenerate.iter().any(|d| d == name) {
            paths.insert(name.to_string(), WarpPath::identity(t));
            aligned.insert(z.clone())?;
        } else {
            aligned.insert(z.with_values(z.name.clone(), warped[*name].clone()))?;
        }
    }
    let post_agreement = metrics::pairwise_agreement(&aligned, names)?;

    Ok(AlignmentResult {
        aligned,
        paths,
        iterations,
        converged,
        pre_agreement,
        post_agreement,
        degenerate,
    })
}

/// Writes alignment paths as CSV rows `channel,i,j`.
pub fn paths_to_csv(paths: &IndexMap<String, WarpPath>) -> String {
    let mut out = String::from("channel,i,j\n");
    for (name, path) in paths {
        for &(i, j) in &path.pairs {
            out.push_str(&format!("{name},{i},{j}\n"));
        }
    }
    out
}
