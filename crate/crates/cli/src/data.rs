//! Dataset loading shared by the pipeline commands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use goldstd_core::dataset::{load_partitions, FeatureMatrix, Partitioning};
use goldstd_core::fusion::{build_gold_standard, ComboId, GoldStandard, RaawConfig};
use goldstd_core::signal::SignalBundle;
use rayon::prelude::*;

use crate::config::RunConfig;

pub struct LoadedSubject {
    pub subject_id: String,
    pub bundle: SignalBundle,
    pub features: BTreeMap<String, FeatureMatrix>,
}

pub struct Dataset {
    pub partitioning: Partitioning,
    pub subjects: Vec<LoadedSubject>,
}

impl Dataset {
    pub fn subject(&self, id: &str) -> Option<&LoadedSubject> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }
}

/// Loads partitions plus every listed subject directory, in parallel but
/// in deterministic order.
pub fn load_dataset(root: &Path, config: &RunConfig) -> anyhow::Result<Dataset> {
    let partitioning = load_partitions(&root.join("partitions.csv"))
        .with_context(|| format!("loading partitions from {}", root.display()))?;
    let load_config = config.load_config();
    let ids: Vec<String> = partitioning.assignment.keys().cloned().collect();
    let subjects: Vec<LoadedSubject> = ids
        .par_iter()
        .map(|id| -> anyhow::Result<LoadedSubject> {
            let dir = root.join(id);
            let (bundle, features) = goldstd_core::dataset::load_subject(&dir, &load_config)
                .with_context(|| format!("loading subject {id}"))?;
            Ok(LoadedSubject {
                subject_id: id.clone(),
                bundle,
                features,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Dataset {
        partitioning,
        subjects,
    })
}

/// Parses a `--combo` value: a single tag or `all`.
pub fn parse_combos(arg: &str) -> anyhow::Result<Vec<ComboId>> {
    if arg == "all" {
        return Ok(ComboId::ALL.to_vec());
    }
    let mut out = Vec::new();
    for tag in arg.split(',') {
        out.push(ComboId::from_tag(tag.trim()).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    if out.is_empty() {
        bail!("empty --combo selection");
    }
    Ok(out)
}

/// Builds one combo's gold standard for every subject, in parallel.
/// Failures are collected per subject rather than aborting the batch.
pub fn build_gold_all(
    dataset: &Dataset,
    combo: ComboId,
    raaw: &RaawConfig,
) -> Vec<(String, Result<GoldStandard, String>)> {
    dataset
        .subjects
        .par_iter()
        .map(|s| {
            let result = build_gold_standard(&s.bundle, combo, raaw).map_err(|e| e.to_string());
            (s.subject_id.clone(), result)
        })
        .collect()
}
