//! Seeded synthetic dataset generation with known latent ground truth.
//!
//! Each subject gets a smooth latent arousal trajectory; raters are
//! delayed, distorted, noisy copies of it, physiological channels are
//! monotone nonlinear transforms with channel-specific lag and noise
//! (EDA couples strongest, RESP weakest), and feature sets are random
//! linear mixes of the latent. The latent itself is stored alongside so
//! tests can score recovery against ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{write_channel_csv, write_feature_csv};
use super::{DatasetError, FeatureMatrix, Partition};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Per-rater delay range in samples at the label rate (inclusive).
    pub rater_lag_range: (usize, usize),
    pub rater_noise_sd: f64,
    /// Native sampling rate for the physiological channel files; must be
    /// an integer multiple of the 2 Hz label rate.
    pub physio_fs: f64,
    /// Feature sets to emit: set name -> dimensionality.
    pub feature_dims: BTreeMap<String, usize>,
    /// Signal-to-noise ratio of the linear feature encodings.
    pub feature_snr: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut feature_dims = BTreeMap::new();
        feature_dims.insert("egemaps-like".to_string(), 12);
        Self {
            n_subjects: 6,
            duration_s: 900.0,
            seed: 1,
            rater_lag_range: (0, 6),
            rater_noise_sd: 0.9,
            physio_fs: 20.0,
            feature_dims,
            feature_snr: 3.0,
        }
    }
}

const LABEL_FS: f64 = 2.0;

impl SynthConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::BadSynthConfig(msg));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.duration_s < 30.0 {
            return bad(format!("duration_s {} too short (min 30)", self.duration_s));
        }
        if self.rater_lag_range.0 > self.rater_lag_range.1 {
            return bad(format!(
                "rater_lag_range {:?} is inverted",
                self.rater_lag_range
            ));
        }
        if self.rater_noise_sd < 0.0 {
            return bad("rater_noise_sd must be non-negative".into());
        }
        let m = self.physio_fs / LABEL_FS;
        if !(m >= 1.0 && (m - m.round()).abs() < 1e-9) {
            return bad(format!(
                "physio_fs {} must be an integer multiple of {LABEL_FS}",
                self.physio_fs
            ));
        }
        if self.feature_snr <= 0.0 {
            return bad("feature_snr must be positive".into());
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn znorm(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
}

/// Smooth random trajectory: low-frequency sinusoids plus integrated
/// noise, standardized to zero mean and unit variance.
fn latent_trajectory(rng: &mut impl Rng, t: usize) -> Vec<f64> {
    let n_components = 4;
    let mut out = vec![0.0; t];
    for _ in 0..n_components {
        let cycles = rng.gen_range(2.5..12.0);
        let amp = rng.gen_range(0.4..1.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (k, o) in out.iter_mut().enumerate() {
            *o += amp * (std::f64::consts::TAU * cycles * k as f64 / t as f64 + phase).sin();
        }
    }
    let mut walk = 0.0;
    for o in out.iter_mut() {
        walk += 0.01 * normal(rng);
        *o += walk;
    }
    znorm(&mut out);
    out
}

/// Temporally smooth noise with unit standard deviation: white noise
/// passed through an EMA and re-standardized. Human annotation error is
/// sluggish, not white at the label rate.
fn smooth_noise(rng: &mut impl Rng, t: usize, alpha: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
    let mut out = ema(&white, alpha);
    znorm(&mut out);
    out
}

/// Exponential moving average, modelling the sluggish response of a
/// physiological channel.
fn ema(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut state = x[0];
    for &v in x {
        state += alpha * (v - state);
        out.push(state);
    }
    out
}

struct SubjectFiles {
    raters: Vec<TimeSeries>,
    physio: Vec<TimeSeries>,
    features: Vec<(String, FeatureMatrix)>,
    latent: TimeSeries,
}

fn generate_subject(config: &SynthConfig, subject_id: &str, index: u64) -> SubjectFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index + 1);

    let t = (config.duration_s * LABEL_FS) as usize;
    let margin = config.rater_lag_range.1;
    let latent_ext = latent_trajectory(&mut rng, t + margin);
    // Grid-aligned latent: sample k of every channel corresponds to
    // latent_ext[k + margin] shifted back by each channel's lag.
    let latent: Vec<f64> = latent_ext[margin..].to_vec();

    let mut raters = Vec::new();
    for r in 0..3 {
        let lag = rng.gen_range(config.rater_lag_range.0..=config.rater_lag_range.1);
        let scale = rng.gen_range(0.6..1.4);
        let offset = rng.gen_range(-0.5..0.5);
        let noise = smooth_noise(&mut rng, t, 0.05);
        let values: Vec<f64> = (0..t)
            .map(|k| {
                scale * latent_ext[k + margin - lag]
                    + offset
                    + config.rater_noise_sd * noise[k]
            })
            .collect();
        raters.push(
            TimeSeries::new(subject_id, format!("A{}", r + 1), LABEL_FS, 0.0, values).unwrap(),
        );
    }

    // Physiological channels at 2 Hz: monotone nonlinearity of a lagged
    // smoothed latent; coupling strength EDA > BPM > RESP.
    let physio_specs: [(&str, f64, f64, f64); 3] = [
        // (name, ema alpha, noise sd, nonlinearity gain)
        ("EDA", 0.10, 0.08, 1.5),
        ("BPM", 0.25, 0.35, 1.0),
        ("RESP", 0.20, 1.0, 0.6),
    ];
    let mut physio = Vec::new();
    for (name, alpha, noise_sd, gain) in physio_specs {
        let smoothed = ema(&latent, alpha);
        let base: Vec<f64> = smoothed
            .iter()
            .map(|&v| match name {
                // Monotone saturating transforms in channel-typical units.
                "EDA" => 2.0 / (1.0 + (-gain * v).exp()),
                "BPM" => 75.0 + 12.0 * (gain * v).tanh(),
                _ => (gain * v).tanh(),
            })
            .collect();
        let values_2hz: Vec<f64> = base
            .iter()
            .map(|&v| v + noise_sd * normal(&mut rng))
            .collect();
        // Native-rate file: hold each 2 Hz value for one block so that
        // block-mean decimation on load recovers it exactly.
        let m = (config.physio_fs / LABEL_FS).round() as usize;
        let native: Vec<f64> = values_2hz
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(m))
            .collect();
        physio.push(TimeSeries::new(subject_id, name, config.physio_fs, 0.0, native).unwrap());
    }

    let mut features = Vec::new();
    for (set_name, &dims) in &config.feature_dims {
        let weights: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut values = ndarray::Array2::zeros((t, dims));
        for k in 0..t {
            for d in 0..dims {
                let noise_sd = weights[d].abs() / config.feature_snr;
                values[[k, d]] = weights[d] * latent[k] + noise_sd * normal(&mut rng);
            }
        }
        features.push((
            set_name.clone(),
            FeatureMatrix {
                subject_id: subject_id.to_string(),
                set_name: set_name.clone(),
                fs: LABEL_FS,
                values,
            },
        ));
    }

    let latent_ts = TimeSeries::new(subject_id, "LATENT", LABEL_FS, 0.0, latent).unwrap();
    SubjectFiles {
        raters,
        physio,
        features,
        latent: latent_ts,
    }
}

/// Contiguous roughly-60/20/20 split with every partition non-empty once
/// there are at least 3 subjects.
fn assign_partition(index: usize, total: usize) -> Partition {
    if total < 3 {
        return Partition::Train;
    }
    let n_devel = (total / 5).max(1);
    let n_test = (total / 5).max(1);
    let n_train = total - n_devel - n_test;
    if index < n_train {
        Partition::Train
    } else if index < n_train + n_devel {
        Partition::Devel
    } else {
        Partition::Test
    }
}

/// Generates the on-disk dataset tree. Per-subject randomness is derived
/// from `(seed, subject index)`, so output is byte-identical for a fixed
/// config regardless of parallelism.
pub fn synth_generate(config: &SynthConfig, root: &Path) -> Result<(), DatasetError> {
    config.validate()?;
    fs::create_dir_all(root).map_err(|e| DatasetError::Io {
        path: root.display().to_string(),
        source: e,
    })?;

    let subject_ids: Vec<String> = (0..config.n_subjects)
        .map(|i| format!("s{:02}", i + 1))
        .collect();

    subject_ids
        .par_iter()
        .enumerate()
        .try_for_each(|(i, subject_id)| -> Result<(), DatasetError> {
            let files = generate_subject(config, subject_id, i as u64);
            let dir = root.join(subject_id);
            let feat_dir = dir.join("features");
            fs::create_dir_all(&feat_dir).map_err(|e| DatasetError::Io {
                path: feat_dir.display().to_string(),
                source: e,
            })?;
            for ts in files.raters.iter().chain(&files.physio) {
                write_channel_csv(&dir.join(format!("{}.csv", ts.name)), ts)?;
            }
            for (set_name, fm) in &files.features {
                write_feature_csv(&feat_dir.join(format!("{set_name}.csv")), fm, 0.0)?;
            }
            write_channel_csv(&dir.join("latent.csv"), &files.latent)?;
            Ok(())
        })?;

    let mut partitions = String::from("subject_id,partition\n");
    for (i, subject_id) in subject_ids.iter().enumerate() {
        partitions.push_str(&format!(
            "{subject_id},{}\n",
            assign_partition(i, config.n_subjects).label()
        ));
    }
    let ppath = root.join("partitions.csv");
    fs::write(&ppath, partitions).map_err(|e| DatasetError::Io {
        path: ppath.display().to_string(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_partitions, load_subject, read_channel_csv, LoadConfig};
    use crate::metrics;
    use tempfile::tempdir;

    fn tree_digest(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            let mut entries: Vec<_> = fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for p in entries {
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    files.push((rel, fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn same_seed_gives_identical_trees() {
        let config = SynthConfig {
            n_subjects: 3,
            duration_s: 60.0,
            ..SynthConfig::default()
        };
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        synth_generate(&config, d1.path()).unwrap();
        synth_generate(&config, d2.path()).unwrap();
        assert_eq!(tree_digest(d1.path()), tree_digest(d2.path()));
    }

    #[test]
    fn noiseless_zero_lag_raters_agree_perfectly() {
        let config = SynthConfig {
            n_subjects: 1,
            duration_s: 60.0,
            rater_lag_range: (0, 0),
            rater_noise_sd: 0.0,
            ..SynthConfig::default()
        };
        let dir = tempdir().unwrap();
        synth_generate(&config, dir.path()).unwrap();
        let (bundle, _) = load_subject(
            &dir.path().join("s01"),
            &LoadConfig {
                target_fs: 2.0,
                savgol: None,
            },
        )
        .unwrap();
        let cc = metrics::pairwise_agreement(&bundle, &["A1", "A2", "A3"]).unwrap();
        assert!((cc - 1.0).abs() < 1e-9, "agreement {cc}");
    }

    #[test]
    fn default_config_gives_weak_but_positive_agreement() {
        // Generator contract: mean pairwise rater CC lands in the weak
        // agreement regime over 20 seeds.
        let mut total = 0.0;
        let n = 20;
        for seed in 0..n {
            let config = SynthConfig {
                n_subjects: 1,
                duration_s: 120.0,
                seed,
                ..SynthConfig::default()
            };
            let dir = tempdir().unwrap();
            synth_generate(&config, dir.path()).unwrap();
            let (bundle, _) = load_subject(
                &dir.path().join("s01"),
                &LoadConfig {
                    target_fs: 2.0,
                    savgol: None,
                },
            )
            .unwrap();
            total += metrics::pairwise_agreement(&bundle, &["A1", "A2", "A3"]).unwrap();
        }
        let mean_cc = total / n as f64;
        assert!(
            (0.1..=0.6).contains(&mean_cc),
            "mean pairwise CC {mean_cc} outside [0.1, 0.6]"
        );
    }

    #[test]
    fn round_trips_through_loader() {
        let config = SynthConfig {
            n_subjects: 1,
            duration_s: 60.0,
            physio_fs: 2.0,
            ..SynthConfig::default()
        };
        let dir = tempdir().unwrap();
        synth_generate(&config, dir.path()).unwrap();
        let sdir = dir.path().join("s01");
        let files = generate_subject(&config, "s01", 0);
        let (bundle, features) = load_subject(
            &sdir,
            &LoadConfig {
                target_fs: 2.0,
                savgol: None,
            },
        )
        .unwrap();
        for ts in files.raters.iter().chain(&files.physio) {
            assert_eq!(bundle.get(&ts.name).unwrap().values, ts.values);
        }
        for (set_name, fm) in &files.features {
            assert_eq!(&features[set_name].values, &fm.values);
        }
        let latent = read_channel_csv(&sdir.join("latent.csv"), "s01", "LATENT").unwrap();
        assert_eq!(latent.values, files.latent.values);
    }

    #[test]
    fn eda_couples_stronger_than_resp() {
        let mut wins = 0;
        let n = 50;
        for seed in 0..n {
            let config = SynthConfig {
                n_subjects: 1,
                duration_s: 120.0,
                seed,
                ..SynthConfig::default()
            };
            let files = generate_subject(&config, "s01", 0);
            let latent = &files.latent.values;
            // Compare on the 2 Hz grid (first sample of each native block).
            let m = (config.physio_fs / LABEL_FS) as usize;
            let eda: Vec<f64> = files.physio[0].values.iter().step_by(m).cloned().collect();
            let resp: Vec<f64> = files.physio[2].values.iter().step_by(m).cloned().collect();
            if metrics::pearson(&eda, latent).unwrap() > metrics::pearson(&resp, latent).unwrap() {
                wins += 1;
            }
        }
        assert!(wins * 10 >= n * 9, "EDA beat RESP in only {wins}/{n} seeds");
    }

    #[test]
    fn partitions_cover_all_splits() {
        let config = SynthConfig {
            n_subjects: 6,
            duration_s: 60.0,
            ..SynthConfig::default()
        };
        let dir = tempdir().unwrap();
        synth_generate(&config, dir.path()).unwrap();
        let p = load_partitions(&dir.path().join("partitions.csv")).unwrap();
        assert_eq!(p.assignment.len(), 6);
        assert!(!p.subjects_in(Partition::Train).is_empty());
        assert!(!p.subjects_in(Partition::Devel).is_empty());
        assert!(!p.subjects_in(Partition::Test).is_empty());
    }

    #[test]
    fn rejects_invalid_config() {
        let dir = tempdir().unwrap();
        let mut c = SynthConfig::default();
        c.n_subjects = 0;
        assert!(synth_generate(&c, dir.path()).is_err());
        let mut c = SynthConfig::default();
        c.rater_lag_range = (5, 2);
        assert!(synth_generate(&c, dir.path()).is_err());
        let mut c = SynthConfig::default();
        c.physio_fs = 3.0;
        assert!(synth_generate(&c, dir.path()).is_err());
    }
}
