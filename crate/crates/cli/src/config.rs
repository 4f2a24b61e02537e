//! Run configuration: JSON-loadable, flag-overridable, and echoed
//! verbatim into every command's output directory.

use std::path::Path;

use anyhow::Context;
use goldstd_core::alignment::CtwConfig;
use goldstd_core::dataset::SynthConfig;
use goldstd_core::fusion::{OutputScale, RaawConfig};
use goldstd_core::model::{GridSpec, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the synth and model seeds when set via
    /// `--seed`.
    pub seed: u64,
    /// Worker threads; `None` lets rayon decide. Output is identical for
    /// any value, so the echoed config omits it.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    /// Label grid rate in Hz.
    pub target_fs: f64,
    /// Savitzky-Golay (window, polyorder) for physiological channels.
    pub savgol: Option<(usize, usize)>,
    pub alignment: CtwConfig,
    pub scale: OutputScale,
    pub skip_alignment: bool,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub grid: GridSpec,
    /// Training window length in label steps.
    pub win: usize,
    /// Training window hop in label steps.
    pub hop: usize,
    /// Epoch budget of the late-fusion model.
    pub fusion_epochs: usize,
    pub fusion_patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: None,
            target_fs: 2.0,
            savgol: Some((25, 3)),
            alignment: CtwConfig::default(),
            scale: OutputScale::default(),
            skip_alignment: false,
            synth: SynthConfig::default(),
            model: ModelConfig {
                max_epochs: 30,
                patience: 10,
                ..ModelConfig::default()
            },
            // Default grid kept small so a full CLI run stays in CPU
            // budget; the paper-scale grid is available via `--config`.
            grid: GridSpec {
                directions: vec![false],
                hidden: vec![32],
                layers: vec![1, 2],
                lr: vec![0.001, 0.005],
            },
            win: 300,
            hop: 50,
            fusion_epochs: 30,
            fusion_patience: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies global flag overrides.
    pub fn apply_flags(&mut self, seed: Option<u64>, jobs: Option<usize>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(j) = jobs {
            self.jobs = Some(j);
        }
        self.synth.seed = self.seed;
        self.model.seed = self.seed;
    }

    pub fn raaw(&self) -> RaawConfig {
        RaawConfig {
            ctw: self.alignment,
            scale: self.scale,
            skip_alignment: self.skip_alignment,
        }
    }

    pub fn load_config(&self) -> goldstd_core::dataset::LoadConfig {
        goldstd_core::dataset::LoadConfig {
            target_fs: self.target_fs,
            savgol: self.savgol,
        }
    }

    /// Writes the effective configuration into the output directory.
    pub fn echo(&self, out_dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self).context("serializing config")?;
        let path = out_dir.join("config.json");
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
