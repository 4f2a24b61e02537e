//! Windowed LSTM sequence regressor with CCC loss: deterministic training
//! loop, hyperparameter grid search, and decision-level late fusion.

mod adam;
mod lstm;
mod loss;

pub use adam::Adam;
pub use loss::{ccc_loss, CccLoss};
pub use lstm::{backward, forward, ForwardCache, LstmParams};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{segment_matrix, window_starts, Partition, Partitioning, Window};
use crate::metrics;
use crate::signal::TimeSeries;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input window")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("hyperparameter {name} = {value} is off the search grid (pass the free-value override to allow it)")]
    OffGrid { name: &'static str, value: String },
    #[error("non-finite gradient in epoch {0}")]
    NonFiniteGradient(usize),
    #[error("need at least 2 prediction sets, got {0}")]
    NotEnoughPredictionSets(usize),
    #[error("prediction grids disagree for subject {0:?}")]
    GridMismatch(String),
    #[error("missing gold standard for subject {0:?}")]
    MissingGold(String),
    #[error("model file error: {0}")]
    Serde(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

pub const HIDDEN_GRID: [usize; 3] = [32, 64, 128];
pub const LAYERS_GRID: [usize; 3] = [1, 2, 4];
pub const LR_GRID: [f64; 3] = [0.0001, 0.001, 0.005];

/// Window geometry matching the 2 Hz label grid (300 steps, hop 50).
pub const DEFAULT_WIN: usize = 300;
pub const DEFAULT_HOP: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bidirectional: bool,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Windows per optimizer step; the CCC loss is computed over the
    /// concatenated steps of the whole batch.
    pub batch_size: usize,
    /// Permit hidden/layers/lr values outside the declared grids.
    pub allow_off_grid: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bidirectional: false,
            hidden: 64,
            layers: 2,
            lr: 0.001,
            seed: 1,
            max_epochs: 100,
            patience: 15,
            batch_size: 8,
            allow_off_grid: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.allow_off_grid {
            if !HIDDEN_GRID.contains(&self.hidden) {
                return Err(ModelError::OffGrid {
                    name: "hidden",
                    value: self.hidden.to_string(),
                });
            }
            if !LAYERS_GRID.contains(&self.layers) {
                return Err(ModelError::OffGrid {
                    name: "layers",
                    value: self.layers.to_string(),
                });
            }
            if !LR_GRID.contains(&self.lr) {
                return Err(ModelError::OffGrid {
                    name: "lr",
                    value: self.lr.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub devel_ccc: f64,
}

/// Learned parameters plus training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: LstmParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub win: usize,
    pub hop: usize,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(self).map_err(|e| ModelError::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ModelError::Serde(e.to_string()))
    }
}

/// Features and target labels for one subject, on the label grid.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
}

/// Per-subject full-length predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSet {
    pub per_subject: BTreeMap<String, TimeSeries>,
}

/// Loss and parameter gradients for a batch of windows, with the CCC loss
/// taken over the concatenation of all steps. This is the exact quantity
/// the optimizer steps on, exposed for gradient checking.
pub fn batch_loss_and_grads(
    params: &LstmParams,
    windows: &[&Window],
) -> Result<(f64, LstmParams), ModelError> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut caches = Vec::with_capacity(windows.len());
    for w in windows {
        let (p, cache) = forward(params, &w.features)?;
        preds.extend_from_slice(&p);
        targets.extend_from_slice(&w.labels);
        caches.push(cache);
    }
    let loss = ccc_loss(&preds, &targets)?;
    let mut grads = params.zeros_like();
    let mut offset = 0;
    for (w, cache) in windows.iter().zip(&caches) {
        let slice = &loss.grad[offset..offset + w.len()];
        backward(params, cache, slice, &mut grads);
        offset += w.len();
    }
    Ok((loss.value, grads))
}

/// Batch loss alone (used by finite-difference checks).
pub fn batch_loss(params: &LstmParams, windows: &[&Window]) -> Result<f64, ModelError> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for w in windows {
        let (p, _) = forward(params, &w.features)?;
        preds.extend_from_slice(&p);
        targets.extend_from_slice(&w.labels);
    }
    Ok(ccc_loss(&preds, &targets)?.value)
}

/// Full-length prediction for one subject: every window is predicted and
/// overlapping window outputs are merged by averaging.
pub fn predict_full(
    params: &LstmParams,
    features: &Array2<f64>,
    win: usize,
    hop: usize,
) -> Result<Vec<f64>, ModelError> {
    let t = features.nrows();
    let mut sums = vec![0.0; t];
    let mut counts = vec![0usize; t];
    for (start, len) in window_starts(t, win, hop) {
        let slice = features.slice(ndarray::s![start..start + len, ..]).to_owned();
        let (p, _) = forward(params, &slice)?;
        for (k, v) in p.iter().enumerate() {
            sums[start + k] += v;
            counts[start + k] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

fn devel_ccc(
    params: &LstmParams,
    devel: &[SubjectData],
    win: usize,
    hop: usize,
) -> Result<f64, ModelError> {
    let mut all_preds = Vec::new();
    let mut all_labels = Vec::new();
    for s in devel {
        let p = predict_full(params, &s.features, win, hop)?;
        all_preds.extend(p);
        all_labels.extend_from_slice(&s.labels);
    }
    Ok(metrics::ccc(&all_preds, &all_labels)?)
}

/// Trains one model: seeded shuffling, Adam updates on batched CCC loss,
/// early stopping on devel CCC, best-epoch parameters restored.
pub fn train(
    config: &ModelConfig,
    train_subjects: &[SubjectData],
    devel_subjects: &[SubjectData],
    win: usize,
    hop: usize,
) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    if train_subjects.is_empty() {
        return Err(ModelError::EmptyPartition("train"));
    }
    if devel_subjects.is_empty() {
        return Err(ModelError::EmptyPartition("devel"));
    }

    let windows: Vec<Window> = train_subjects
        .iter()
        .flat_map(|s| segment_matrix(&s.subject_id, &s.features, &s.labels, win, hop))
        .collect();
    let input_dim = train_subjects[0].features.ncols();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = LstmParams::init(
        input_dim,
        config.hidden,
        config.layers,
        config.bidirectional,
        &mut rng,
    );
    let mut optimizer = Adam::new(config.lr, params.to_flat().len());

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_ccc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;

    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&Window> = chunk.iter().map(|&k| &windows[k]).collect();
            let (loss_value, grads) = batch_loss_and_grads(&params, &batch)?;
            if !grads.is_finite() {
                return Err(ModelError::NonFiniteGradient(epoch));
            }
            optimizer.step(&mut params, &grads);
            epoch_loss += loss_value;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;
        let ccc = devel_ccc(&params, devel_subjects, win, hop)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            devel_ccc: ccc,
        });
        if ccc > best_ccc {
            best_ccc = ccc;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }

    Ok(TrainedModel {
        config: config.clone(),
        params: best_params,
        history,
        best_epoch,
        win,
        hop,
    })
}

/// Partition-level evaluation: CCC over concatenated subjects (the
/// challenge convention) plus the per-subject mean for transparency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub concatenated_ccc: f64,
    pub mean_subject_ccc: f64,
    pub per_subject: BTreeMap<String, f64>,
}

pub fn evaluate(
    model: &TrainedModel,
    subjects: &[SubjectData],
) -> Result<(EvalReport, PredictionSet), ModelError> {
    if subjects.is_empty() {
        return Err(ModelError::EmptyPartition("eval"));
    }
    let mut all_preds = Vec::new();
    let mut all_labels = Vec::new();
    let mut per_subject = BTreeMap::new();
    let mut pred_set = BTreeMap::new();
    for s in subjects {
        let p = predict_full(&model.params, &s.features, model.win, model.hop)?;
        per_subject.insert(s.subject_id.clone(), metrics::ccc(&p, &s.labels)?);
        pred_set.insert(
            s.subject_id.clone(),
            TimeSeries::new(&s.subject_id, "PRED", 2.0, 0.0, p.clone())
                .expect("finite predictions"),
        );
        all_preds.extend(p);
        all_labels.extend_from_slice(&s.labels);
    }
    let concatenated_ccc = metrics::ccc(&all_preds, &all_labels)?;
    let mean_subject_ccc =
        per_subject.values().sum::<f64>() / per_subject.len() as f64;
    Ok((
        EvalReport {
            concatenated_ccc,
            mean_subject_ccc,
            per_subject,
        },
        PredictionSet {
            per_subject: pred_set,
        },
    ))
}

/// Hyperparameter grid. Iteration order (and therefore grid index) is
/// direction-major, then hidden, layers, lr.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub directions: Vec<bool>,
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub lr: Vec<f64>,
}

impl GridSpec {
    pub fn full() -> Self {
        Self {
            directions: vec![false, true],
            hidden: HIDDEN_GRID.to_vec(),
            layers: LAYERS_GRID.to_vec(),
            lr: LR_GRID.to_vec(),
        }
    }

    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &bidirectional in &self.directions {
            for &hidden in &self.hidden {
                for &layers in &self.layers {
                    for &lr in &self.lr {
                        out.push(ModelConfig {
                            bidirectional,
                            hidden,
                            layers,
                            lr,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub grid_index: usize,
    pub config: ModelConfig,
    pub devel_ccc: f64,
    pub best_epoch: usize,
}

/// Trains every grid point and returns the devel-best model together with
/// the full leaderboard (sorted by devel CCC, ties broken by grid index).
pub fn grid_search(
    grid: &GridSpec,
    base: &ModelConfig,
    train_subjects: &[SubjectData],
    devel_subjects: &[SubjectData],
    win: usize,
    hop: usize,
) -> Result<(TrainedModel, Vec<LeaderboardEntry>), ModelError> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(ModelError::EmptyPartition("grid"));
    }
    let mut results: Vec<(usize, TrainedModel)> = configs
        .par_iter()
        .enumerate()
        .map(|(idx, cfg)| {
            train(cfg, train_subjects, devel_subjects, win, hop).map(|m| (idx, m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|(idx, _)| *idx);

    let mut leaderboard: Vec<LeaderboardEntry> = results
        .iter()
        .map(|(idx, m)| LeaderboardEntry {
            grid_index: *idx,
            config: m.config.clone(),
            devel_ccc: best_devel(m),
            best_epoch: m.best_epoch,
        })
        .collect();
    leaderboard.sort_by(|a, b| {
        b.devel_ccc
            .total_cmp(&a.devel_ccc)
            .then(a.grid_index.cmp(&b.grid_index))
    });

    let winner_idx = leaderboard[0].grid_index;
    let winner = results.into_iter().find(|(i, _)| *i == winner_idx).unwrap().1;
    Ok((winner, leaderboard))
}

fn best_devel(m: &TrainedModel) -> f64 {
    m.history
        .iter()
        .map(|e| e.devel_ccc)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fixed fusion-stage hyperparameters: unidirectional, h = 64, 4 layers,
/// lr = 0.001.
pub fn fusion_config(seed: u64, max_epochs: usize, patience: usize) -> ModelConfig {
    ModelConfig {
        bidirectional: false,
        hidden: 64,
        layers: 4,
        lr: 0.001,
        seed,
        max_epochs,
        patience,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LateFusionResult {
    pub model: TrainedModel,
    pub fused: PredictionSet,
    pub devel: EvalReport,
    pub test: EvalReport,
}

/// Decision-level fusion: stacks the per-model predictions of each
/// subject into a T x M feature matrix, trains the fixed-hyperparameter
/// fusion LSTM on the train split, early-stops on devel, and reports
/// devel/test CCC.
pub fn late_fuse(
    prediction_sets: &[PredictionSet],
    gold: &BTreeMap<String, Vec<f64>>,
    partitioning: &Partitioning,
    config: &ModelConfig,
    win: usize,
    hop: usize,
) -> Result<LateFusionResult, ModelError> {
    if prediction_sets.len() < 2 {
        return Err(ModelError::NotEnoughPredictionSets(prediction_sets.len()));
    }

    let mut by_partition: BTreeMap<Partition, Vec<SubjectData>> = BTreeMap::new();
    let mut all_subjects = Vec::new();
    for (subject_id, labels) in gold {
        let mut columns = Vec::new();
        for set in prediction_sets {
            let ts = set
                .per_subject
                .get(subject_id)
                .ok_or_else(|| ModelError::GridMismatch(subject_id.clone()))?;
            if ts.len() != labels.len() {
                return Err(ModelError::GridMismatch(subject_id.clone()));
            }
            columns.push(ts.values.clone());
        }
        let t = labels.len();
        let m = columns.len();
        let features = Array2::from_shape_fn((t, m), |(row, col)| columns[col][row]);
        let data = SubjectData {
            subject_id: subject_id.clone(),
            features,
            labels: labels.clone(),
        };
        let partition = partitioning
            .assignment
            .get(subject_id)
            .copied()
            .ok_or_else(|| ModelError::MissingGold(subject_id.clone()))?;
        by_partition.entry(partition).or_default().push(data.clone());
        all_subjects.push(data);
    }

    let empty = Vec::new();
    let train_set = by_partition.get(&Partition::Train).unwrap_or(&empty);
    let devel_set = by_partition.get(&Partition::Devel).unwrap_or(&empty);
    let test_set = by_partition.get(&Partition::Test).unwrap_or(&empty);

    let model = train(config, train_set, devel_set, win, hop)?;
    let (devel, _) = evaluate(&model, devel_set)?;
    let (test, _) = evaluate(&model, test_set)?;
    let (_, fused) = evaluate(&model, &all_subjects)?;
    Ok(LateFusionResult {
        model,
        fused,
        devel,
        test,
    })
}

#[cfg(test)]
mod tests;
