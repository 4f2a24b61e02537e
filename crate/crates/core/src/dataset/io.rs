//! CSV reading and writing for channels, features, and partitions.
//!
//! Values are written with Rust's shortest-roundtrip float formatting, so
//! a write/read cycle is exact and repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{DatasetError, FeatureMatrix, Partition, Partitioning};
use crate::signal::{self, SignalBundle, TimeSeries};

/// Channel names recognized inside a subject directory.
pub const CHANNEL_NAMES: [&str; 6] = ["A1", "A2", "A3", "EDA", "BPM", "RESP"];
/// Channels treated as physiological (resampled and smoothed on load).
pub const PHYSIO_NAMES: [&str; 3] = ["EDA", "BPM", "RESP"];

/// Preprocessing applied by [`load_subject`].
#[derive(Debug, Clone, Copy)]
pub struct LoadConfig {
    /// Common label grid rate; channels at higher rates are decimated.
    pub target_fs: f64,
    /// Savitzky-Golay (window, polyorder) applied to physiological
    /// channels after resampling; `None` disables smoothing.
    pub savgol: Option<(usize, usize)>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            target_fs: 2.0,
            savgol: Some((25, 3)),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_field(path: &Path, line: usize, column: &str, field: &str) -> Result<f64, DatasetError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(path, line, format!("cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(DatasetError::NonFinite {
            file: path.display().to_string(),
            line,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Infers the sampling rate from the first and last timestamps, snapping
/// to the nearest integer rate when within float noise, and validates that
/// the grid is uniform.
fn infer_fs(path: &Path, timestamps: &[f64]) -> Result<f64, DatasetError> {
    if timestamps.len() < 2 {
        return Err(malformed(path, 2, "need at least 2 samples to infer rate"));
    }
    let n = timestamps.len();
    let span = timestamps[n - 1] - timestamps[0];
    if span <= 0.0 {
        return Err(malformed(path, 2, "timestamps must be strictly increasing"));
    }
    let mut fs = (n - 1) as f64 / span;
    if (fs - fs.round()).abs() < 1e-6 {
        fs = fs.round();
    }
    let dt = 1.0 / fs;
    for (k, w) in timestamps.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if (gap - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(malformed(
                path,
                k + 3,
                format!("non-uniform timestamp gap {gap} (expected {dt})"),
            ));
        }
    }
    Ok(fs)
}

/// Reads a `timestamp,value` channel CSV.
pub fn read_channel_csv(
    path: &Path,
    subject_id: &str,
    name: &str,
) -> Result<TimeSeries, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,value" => {}
        other => {
            return Err(malformed(
                path,
                1,
                format!("expected header 'timestamp,value', got {:?}", other.map(|(_, h)| h)),
            ))
        }
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, ',');
        let t = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "missing timestamp"))?;
        let v = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "missing value field"))?;
        timestamps.push(parse_field(path, lineno, "timestamp", t)?);
        values.push(parse_field(path, lineno, "value", v)?);
    }
    if values.is_empty() {
        return Err(malformed(path, 2, "no data rows"));
    }
    let fs = infer_fs(path, &timestamps)?;
    Ok(TimeSeries::new(subject_id, name, fs, timestamps[0], values)?)
}

/// Writes a channel as `timestamp,value` CSV.
pub fn write_channel_csv(path: &Path, ts: &TimeSeries) -> Result<(), DatasetError> {
    let mut out = String::from("timestamp,value\n");
    for (k, v) in ts.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", ts.timestamp(k), v));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a `timestamp,f0..f{D-1}` feature CSV.
pub fn read_feature_csv(
    path: &Path,
    subject_id: &str,
    set_name: &str,
) -> Result<FeatureMatrix, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(malformed(path, 1, "empty file")),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"timestamp") || cols.len() < 2 {
        return Err(malformed(
            path,
            1,
            "expected header 'timestamp,f0,...'".to_string(),
        ));
    }
    let dims = cols.len() - 1;
    for (d, col) in cols[1..].iter().enumerate() {
        if *col != format!("f{d}") {
            return Err(malformed(
                path,
                1,
                format!("expected column f{d}, got {col:?}"),
            ));
        }
    }
    let mut timestamps = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dims + 1 {
            return Err(malformed(
                path,
                lineno,
                format!("expected {} fields, got {}", dims + 1, fields.len()),
            ));
        }
        timestamps.push(parse_field(path, lineno, "timestamp", fields[0])?);
        for (d, f) in fields[1..].iter().enumerate() {
            rows.push(parse_field(path, lineno, &format!("f{d}"), f)?);
        }
    }
    if timestamps.is_empty() {
        return Err(malformed(path, 2, "no data rows"));
    }
    let fs = infer_fs(path, &timestamps)?;
    let t = timestamps.len();
    let values = Array2::from_shape_vec((t, dims), rows)
        .map_err(|e| malformed(path, 2, format!("shape error: {e}")))?;
    Ok(FeatureMatrix {
        subject_id: subject_id.to_string(),
        set_name: set_name.to_string(),
        fs,
        values,
    })
}

/// Writes a feature matrix as `timestamp,f0..f{D-1}` CSV on the grid
/// starting at `t0` with rate `fs`.
pub fn write_feature_csv(path: &Path, fm: &FeatureMatrix, t0: f64) -> Result<(), DatasetError> {
    let mut header = String::from("timestamp");
    for d in 0..fm.dims() {
        header.push_str(&format!(",f{d}"));
    }
    header.push('\n');
    let mut out = header;
    for (k, row) in fm.values.rows().into_iter().enumerate() {
        out.push_str(&format!("{}", t0 + k as f64 / fm.fs));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads the `subject_id,partition` assignment file.
pub fn load_partitions(path: &Path) -> Result<Partitioning, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut assignment = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if lineno == 1 {
            if line.trim() != "subject_id,partition" {
                return Err(malformed(path, 1, "expected header 'subject_id,partition'"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, ',');
        let subject = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "missing subject_id"))?
            .trim()
            .to_string();
        let label = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "missing partition label"))?
            .trim();
        let partition = Partition::parse(label)?;
        if assignment.insert(subject.clone(), partition).is_some() {
            return Err(DatasetError::DuplicateSubject(subject));
        }
    }
    Ok(Partitioning { assignment })
}

/// Loads one subject directory: channel CSVs (resampled to the target
/// grid, physiological channels smoothed) plus any feature sets, all
/// trimmed to the common overlapping length.
pub fn load_subject(
    dir: &Path,
    config: &LoadConfig,
) -> Result<(SignalBundle, BTreeMap<String, FeatureMatrix>), DatasetError> {
    let subject_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| dir.display().to_string());

    let mut channels = Vec::new();
    for name in CHANNEL_NAMES {
        let path = dir.join(format!("{name}.csv"));
        if !path.exists() {
            continue;
        }
        let mut ts = read_channel_csv(&path, &subject_id, name)?;
        if ts.fs != config.target_fs {
            ts = signal::resample(&ts, config.target_fs)?;
        }
        if PHYSIO_NAMES.contains(&name) {
            if let Some((window, polyorder)) = config.savgol {
                ts = signal::savitzky_golay(&ts, window.min(odd_cap(ts.len())), polyorder)?;
            }
        }
        channels.push(ts);
    }
    if channels.is_empty() {
        return Err(DatasetError::NoChannels(dir.display().to_string()));
    }

    let mut features = BTreeMap::new();
    let feat_dir = dir.join("features");
    if feat_dir.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(&feat_dir)
            .map_err(|e| io_err(&feat_dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
            .collect();
        entries.sort();
        for path in entries {
            let set_name = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default();
            let fm = read_feature_csv(&path, &subject_id, &set_name)?;
            features.insert(set_name, fm);
        }
    }

    // Trim everything to the common overlapping length.
    let min_len = channels
        .iter()
        .map(|c| c.len())
        .chain(features.values().map(|f| f.rows()))
        .min()
        .unwrap();
    if min_len == 0 {
        return Err(DatasetError::EmptyOverlap);
    }
    let mut bundle = SignalBundle::new(&subject_id);
    for mut ts in channels {
        ts.values.truncate(min_len);
        bundle.insert(ts)?;
    }
    for fm in features.values_mut() {
        if fm.rows() > min_len {
            fm.values = fm.values.slice(ndarray::s![..min_len, ..]).to_owned();
        }
    }
    Ok((bundle, features))
}

/// Largest odd window not exceeding the series length.
fn odd_cap(len: usize) -> usize {
    if len % 2 == 0 {
        len - 1
    } else {
        len
    }
}
