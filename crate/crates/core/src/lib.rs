//! Building and evaluating physiologically-adapted gold standards for
//! continuous arousal.
//!
//! The pipeline: resample and smooth raw channels onto a shared 2 Hz grid
//! ([`signal`]), align rater and physiological traces with iterative banded
//! DTW ([`alignment`]), fuse them with agreement weighting ([`fusion`]),
//! and evaluate the fused targets with a windowed LSTM regressor trained
//! on a CCC loss ([`model`]). [`dataset`] handles on-disk layout, windowing,
//! and a seeded synthetic generator with known latent ground truth;
//! [`metrics`] provides the agreement and evaluation statistics.

pub mod alignment;
pub mod dataset;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod signal;

pub use signal::{SignalBundle, TimeSeries};
