//! TOML run configuration. Every section is optional; command-line flags
//! override whatever the file sets. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use detkit::augment::AugmentConfig;
use detkit::fuse::{default_ensemble_config, default_fusion_config, DEFAULT_TEST_SCALES};
use detkit::simdet::NoiseProfile;
use detkit::SuppressionConfig;
use serde::Deserialize;

use crate::failure::{Failure, Outcome};
use crate::output;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub data: DataSection,
    pub output: OutputSection,
    pub augment: Option<AugmentConfig>,
    pub simulate: Option<NoiseProfile>,
    pub suppress: Option<SuppressionConfig>,
    pub fusion: Option<SuppressionConfig>,
    pub ensemble: Option<SuppressionConfig>,
    pub pipeline: PipelineSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub gt: Option<PathBuf>,
    pub images: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub detectors: usize,
    pub scales: Vec<u32>,
    pub longer_cap: u32,
    /// Also run every scale on mirrored images.
    pub flip: bool,
    /// Composites to generate alongside the detection stages; 0 skips.
    pub augment_count: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            detectors: 3,
            scales: DEFAULT_TEST_SCALES.to_vec(),
            longer_cap: 1333,
            flip: false,
            augment_count: 0,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Outcome<Self> {
        let bytes = output::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Failure::Config {
            path: path.to_path_buf(),
            message: "not UTF-8 text".into(),
        })?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| Failure::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.gt, &mut cfg.data.images, &mut cfg.output.dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn fusion_or_default(&self) -> SuppressionConfig {
        self.fusion.unwrap_or_else(default_fusion_config)
    }

    pub fn ensemble_or_default(&self) -> SuppressionConfig {
        self.ensemble.unwrap_or_else(default_ensemble_config)
    }
}

impl PipelineSection {
    pub fn validate(&self) -> Outcome<()> {
        if self.detectors == 0 {
            return Err(Failure::invalid("pipeline needs at least one detector"));
        }
        if self.scales.is_empty() {
            return Err(Failure::invalid("pipeline scale set is empty"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Failure::invalid(format!(
                "pipeline scales {:?} must be strictly increasing",
                self.scales
            )));
        }
        Ok(())
    }
}
