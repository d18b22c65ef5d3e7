//! Pipeline configuration file (TOML). Every field has a default, and a
//! missing config file is written out with all defaults filled in so a run's
//! full parameterization can be archived next to its outputs.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierError};
use crate::fusion::{FusionConfig, FusionConfigError};
use crate::geometry::{EyeSpec, MouthSpec};
use crate::ingest::SynthLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub left_eye: EyeSpec,
    pub right_eye: EyeSpec,
    pub mouth: MouthSpec,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            left_eye: EyeSpec::LEFT,
            right_eye: EyeSpec::RIGHT,
            mouth: MouthSpec::DEFAULT,
        }
    }
}

impl From<GeometryConfig> for SynthLayout {
    fn from(g: GeometryConfig) -> Self {
        SynthLayout {
            left_eye: g.left_eye,
            right_eye: g.right_eye,
            mouth: g.mouth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DashboardSection {
    pub bind: String,
    pub read_only: bool,
}

impl Default for DashboardSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            read_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Bounded queue between the frame source and processing.
    pub buffer_size: usize,
    /// Live mode: how many frames old a substituted classifier result may be.
    pub staleness_frames: u32,
    pub store_path: PathBuf,
    /// Command run through `sh -c` on each alarm; `{t_ms}`, `{session}` and
    /// `{wall}` are substituted. Alarms go to stderr when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alarm_hook: Option<String>,
    pub geometry: GeometryConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
    pub dashboard: DashboardSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            buffer_size: 64,
            staleness_frames: 2,
            store_path: PathBuf::from("events.jsonl"),
            alarm_hook: None,
            geometry: GeometryConfig::default(),
            fusion: FusionConfig::default(),
            classifier: ClassifierConfig::default(),
            dashboard: DashboardSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Fusion(#[from] FusionConfigError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("buffer_size must be at least 1")]
    BufferSize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion.validate()?;
        self.classifier.validate()?;
        if self.buffer_size == 0 {
            return Err(ConfigError::BufferSize);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or writes the defaults there if it does not exist yet.
    pub fn load_or_init(path: &Path) -> Result<Self, ConfigError> {
        let io_err = |source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        };
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_toml(&text, path),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let cfg = Self::default();
                std::fs::write(path, cfg.to_toml()).map_err(io_err)?;
                log::info!("wrote default config to {}", path.display());
                Ok(cfg)
            }
            Err(e) => Err(io_err(e)),
        }
    }

    /// Directory that relative paths in this config resolve against.
    pub fn base_dir(path: Option<&Path>) -> PathBuf {
        path.and_then(Path::parent)
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}
