//! Dataset ingestion, partitions, feature matrices, training windows, and
//! the seeded synthetic generator.
//!
//! On-disk layout, one directory per subject:
//!
//! ```text
//! <root>/<subject_id>/{A1,A2,A3,EDA,BPM,RESP}.csv   # timestamp,value
//! <root>/<subject_id>/features/<set_name>.csv       # timestamp,f0..f{D-1}
//! <root>/<subject_id>/latent.csv                    # synthetic only
//! <root>/partitions.csv                             # subject_id,partition
//! ```

mod io;
mod synth;
mod window;

pub use io::{
    load_partitions, load_subject, read_channel_csv, read_feature_csv, write_channel_csv,
    write_feature_csv, LoadConfig, CHANNEL_NAMES, PHYSIO_NAMES,
};
pub use synth::{synth_generate, SynthConfig};
pub use window::{segment, segment_matrix, window_starts, Window};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: non-finite value in column {column}")]
    NonFinite {
        file: String,
        line: usize,
        column: String,
    },
    #[error("duplicate subject {0:?} in partitions file")]
    DuplicateSubject(String),
    #[error("unknown partition label {0:?} (expected train|devel|test)")]
    UnknownPartition(String),
    #[error("subject directory {0} has no channel files")]
    NoChannels(String),
    #[error("channels have no overlapping samples after resampling")]
    EmptyOverlap,
    #[error("feature rows ({features}) do not match label rows ({labels})")]
    RowMismatch { features: usize, labels: usize },
    #[error("invalid synthetic config: {0}")]
    BadSynthConfig(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
}

/// T x D feature table aligned to the label grid.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub subject_id: String,
    pub set_name: String,
    pub fs: f64,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Devel,
    Test,
}

impl Partition {
    pub fn parse(label: &str) -> Result<Partition, DatasetError> {
        match label {
            "train" => Ok(Partition::Train),
            "devel" => Ok(Partition::Devel),
            "test" => Ok(Partition::Test),
            other => Err(DatasetError::UnknownPartition(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Devel => "devel",
            Partition::Test => "test",
        }
    }
}

/// Subject-to-split assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partitioning {
    pub assignment: BTreeMap<String, Partition>,
}

impl Partitioning {
    pub fn subjects_in(&self, p: Partition) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, v)| **v == p)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}
