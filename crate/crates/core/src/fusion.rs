//! Agreement weighting (EWE), the align-weight-fuse pipeline (RAAW), and
//! the nine gold-standard signal combinations.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, AlignmentError, CtwConfig};
use crate::metrics::{self, MetricsError};
use crate::signal::{self, SignalBundle, SignalError, TimeSeries};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("need at least 2 channels, got {0}")]
    NotEnoughChannels(usize),
    #[error("weights do not match fused channels: {0}")]
    WeightMismatch(String),
    #[error("unknown combo tag {0:?}")]
    UnknownCombo(String),
    #[error("subject {subject}: missing channel {channel:?} required by combo {combo}")]
    MissingChannel {
        subject: String,
        channel: String,
        combo: String,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

/// The nine signal combinations fused into gold standards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComboId {
    A123,
    A12Eda,
    A12Bpm,
    A12Resp,
    A123EdaBpm,
    A123EdaResp,
    A123BpmResp,
    A12EdaBpmResp,
    PhysOnly,
}

impl ComboId {
    pub const ALL: [ComboId; 9] = [
        ComboId::A123,
        ComboId::A12Eda,
        ComboId::A12Bpm,
        ComboId::A12Resp,
        ComboId::A123EdaBpm,
        ComboId::A123EdaResp,
        ComboId::A123BpmResp,
        ComboId::A12EdaBpmResp,
        ComboId::PhysOnly,
    ];

    /// Ordered member channels of the combination.
    pub fn members(&self) -> &'static [&'static str] {
        match self {
            ComboId::A123 => &["A1", "A2", "A3"],
            ComboId::A12Eda => &["A1", "A2", "EDA"],
            ComboId::A12Bpm => &["A1", "A2", "BPM"],
            ComboId::A12Resp => &["A1", "A2", "RESP"],
            ComboId::A123EdaBpm => &["A1", "A2", "A3", "EDA", "BPM"],
            ComboId::A123EdaResp => &["A1", "A2", "A3", "EDA", "RESP"],
            ComboId::A123BpmResp => &["A1", "A2", "A3", "BPM", "RESP"],
            ComboId::A12EdaBpmResp => &["A1", "A2", "EDA", "BPM", "RESP"],
            ComboId::PhysOnly => &["EDA", "BPM", "RESP"],
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ComboId::A123 => "a123",
            ComboId::A12Eda => "a12-eda",
            ComboId::A12Bpm => "a12-bpm",
            ComboId::A12Resp => "a12-resp",
            ComboId::A123EdaBpm => "a123-eda-bpm",
            ComboId::A123EdaResp => "a123-eda-resp",
            ComboId::A123BpmResp => "a123-bpm-resp",
            ComboId::A12EdaBpmResp => "a12-eda-bpm-resp",
            ComboId::PhysOnly => "phys-only",
        }
    }

    pub fn from_tag(tag: &str) -> Result<ComboId, FusionError> {
        ComboId::ALL
            .into_iter()
            .find(|c| c.tag() == tag)
            .ok_or_else(|| FusionError::UnknownCombo(tag.to_string()))
    }
}

/// Output-range policy for the fused trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputScale {
    /// Per-subject min-max rescale to [lo, hi].
    MinMax { lo: f64, hi: f64 },
    /// Leave the fused trace in z-space.
    ZSpace,
}

impl Default for OutputScale {
    fn default() -> Self {
        OutputScale::MinMax { lo: -1.0, hi: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaawConfig {
    pub ctw: CtwConfig,
    pub scale: OutputScale,
    /// Skip the alignment stage (weight and fuse the raw z-normalized
    /// channels instead).
    pub skip_alignment: bool,
}

impl Default for RaawConfig {
    fn default() -> Self {
        Self {
            ctw: CtwConfig::default(),
            scale: OutputScale::default(),
            skip_alignment: false,
        }
    }
}

/// Compact alignment provenance carried by a gold standard.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentMeta {
    pub iterations: usize,
    pub converged: bool,
    pub pre_agreement: f64,
    pub post_agreement: f64,
    pub degenerate: Vec<String>,
}

/// Fused target trace plus full provenance.
#[derive(Debug, Clone, Serialize)]
pub struct GoldStandard {
    pub series: TimeSeries,
    pub combo: ComboId,
    pub weights: IndexMap<String, f64>,
    pub alignment_meta: Option<AlignmentMeta>,
    pub scale: OutputScale,
    /// Set when all raw weights clipped to zero and the uniform fallback
    /// was used.
    pub uniform_fallback: bool,
}

/// Evaluator weights: each channel is scored by its Pearson correlation
/// with the leave-one-out mean of the others, negatives are clipped to
/// zero, and the result is normalized to sum 1. If everything clips to
/// zero, uniform weights are returned with the fallback flag set.
pub fn ewe_weights(
    bundle: &SignalBundle,
    names: &[&str],
) -> Result<(IndexMap<String, f64>, bool), FusionError> {
    if names.len() < 2 {
        return Err(FusionError::NotEnoughChannels(names.len()));
    }
    let mut raw = IndexMap::new();
    for (k, name) in names.iter().enumerate() {
        let others: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, n)| *n)
            .collect();
        let reference = signal::mean_signal(bundle, &others)?;
        let ch = bundle.get(name)?;
        let r = metrics::pearson(&ch.values, &reference.values)?;
        raw.insert(name.to_string(), r.max(0.0));
    }
    let total: f64 = raw.values().sum();
    if total <= 0.0 {
        let u = 1.0 / names.len() as f64;
        return Ok((names.iter().map(|n| (n.to_string(), u)).collect(), true));
    }
    raw.values_mut().for_each(|w| *w /= total);
    Ok((raw, false))
}

/// Pointwise weighted average of the channels covered by `weights`.
pub fn ewe_fuse(
    bundle: &SignalBundle,
    weights: &IndexMap<String, f64>,
) -> Result<TimeSeries, FusionError> {
    if weights.is_empty() {
        return Err(FusionError::NotEnoughChannels(0));
    }
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FusionError::WeightMismatch(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    for name in weights.keys() {
        if !bundle.channels.contains_key(name) {
            return Err(FusionError::WeightMismatch(format!(
                "weight for absent channel {name:?}"
            )));
        }
    }
    let t = bundle.len();
    let mut acc = vec![0.0; t];
    let mut template = None;
    for (name, w) in weights {
        let ch = bundle.get(name)?;
        for (a, v) in acc.iter_mut().zip(&ch.values) {
            *a += w * v;
        }
        template = Some(ch);
    }
    Ok(template.unwrap().with_values("GOLD", acc))
}

/// The full fusion pipeline: z-normalize, align, weight, fuse, rescale.
/// Single-channel selections bypass alignment and weighting.
pub fn raaw(
    bundle: &SignalBundle,
    names: &[&str],
    combo: ComboId,
    config: &RaawConfig,
) -> Result<GoldStandard, FusionError> {
    if names.is_empty() {
        return Err(FusionError::NotEnoughChannels(0));
    }

    if names.len() == 1 {
        let z = signal::znormalize(bundle.get(names[0])?)?;
        let series = apply_scale(&z.series, &config.scale)?;
        let mut weights = IndexMap::new();
        weights.insert(names[0].to_string(), 1.0);
        return Ok(GoldStandard {
            series: series.with_values("GOLD", series.values.clone()),
            combo,
            weights,
            alignment_meta: None,
            scale: config.scale,
            uniform_fallback: false,
        });
    }

    let (fused_input, meta) = if config.skip_alignment {
        let mut znormed = SignalBundle::new(&bundle.subject_id);
        for name in names {
            znormed.insert(signal::znormalize(bundle.get(name)?)?.series)?;
        }
        (znormed, None)
    } else {
        let result = alignment::ctw_align(bundle, names, &config.ctw)?;
        let meta = AlignmentMeta {
            iterations: result.iterations,
            converged: result.converged,
            pre_agreement: result.pre_agreement,
            post_agreement: result.post_agreement,
            degenerate: result.degenerate.clone(),
        };
        (result.aligned, Some(meta))
    };

    let (weights, uniform_fallback) = ewe_weights(&fused_input, names)?;
    let fused = ewe_fuse(&fused_input, &weights)?;
    let series = apply_scale(&fused, &config.scale)?;

    Ok(GoldStandard {
        series,
        combo,
        weights,
        alignment_meta: meta,
        scale: config.scale,
        uniform_fallback,
    })
}

fn apply_scale(ts: &TimeSeries, scale: &OutputScale) -> Result<TimeSeries, FusionError> {
    match scale {
        OutputScale::MinMax { lo, hi } => Ok(signal::minmax_scale(ts, *lo, *hi)?),
        OutputScale::ZSpace => Ok(ts.clone()),
    }
}

/// Builds the gold standard for one combo, checking member availability.
pub fn build_gold_standard(
    bundle: &SignalBundle,
    combo: ComboId,
    config: &RaawConfig,
) -> Result<GoldStandard, FusionError> {
    let members = combo.members();
    for m in members {
        if !bundle.channels.contains_key(*m) {
            return Err(FusionError::MissingChannel {
                subject: bundle.subject_id.clone(),
                channel: m.to_string(),
                combo: combo.tag().to_string(),
            });
        }
    }
    raaw(bundle, members, combo, config)
}
