use std::path::{Path, PathBuf};

use motiontok::eval::HorizonMode;
use motiontok::motion_lm::{DecodeConfig, LmConfig, LmTrainConfig, ParseMode};
use motiontok::skeleton::SynthConfig;
use motiontok::vgmt::{TokenizerTrainConfig, VgmtConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Sequences are generated in memory from `data.synth`.
    #[default]
    Synthetic,
    /// Sequences are read from MSKL files listed in `data.paths`.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Number of synthetic sequences.
    pub count: usize,
    /// MSKL files or directories holding them.
    pub paths: Vec<PathBuf>,
    /// Frames per clip for tokenizer training, estimation and in-betweening.
    /// Prediction uses clips of twice this length, split in half.
    pub clip_frames: usize,
    /// Share of sequences held out for evaluation (taken from the end).
    pub eval_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            count: 200,
            paths: Vec::new(),
            clip_frames: 16,
            eval_fraction: 0.2,
            synth: SynthConfig { frames: 32, ..SynthConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub horizon_mode: HorizonMode,
    pub parse_mode: ParseMode,
    pub decode: DecodeConfig,
    /// Bins of the codebook cosine-similarity histogram.
    pub cosine_bins: usize,
    /// Joint whose per-code displacement directions go into the sphere report.
    pub sphere_joint: usize,
    /// Evaluate at most this many examples.
    pub max_examples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon_mode: HorizonMode::Cumulative,
            parse_mode: ParseMode::Robust,
            decode: DecodeConfig::default(),
            cosine_bins: 20,
            sphere_joint: 16,
            max_examples: None,
        }
    }
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data generation and model initialisation.
    pub seed: u64,
    pub data: DataConfig,
    pub tokenizer: VgmtConfig,
    pub tokenizer_train: TokenizerTrainConfig,
    pub lm: LmConfig,
    pub lm_train: LmTrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tokenizer = VgmtConfig::default();
        let lm = LmConfig {
            visual_channels: tokenizer.feature_channels,
            ..LmConfig::default()
        };
        Self {
            seed: 0,
            data: DataConfig::default(),
            tokenizer,
            tokenizer_train: TokenizerTrainConfig::default(),
            lm,
            lm_train: LmTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative data paths are resolved
    /// against the file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.data.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::other(format!("cannot serialize config: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn provenance(&self) -> Result<String, CliError> {
        Ok(format!("motiontok {} config {}", env!("CARGO_PKG_VERSION"), self.hash()?))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.tokenizer.validate()?;
        self.tokenizer_train.validate()?;
        self.lm.validate()?;
        self.lm_train.validate()?;
        self.eval.decode.validate()?;
        self.data.synth.validate()?;
        let d = &self.data;
        if d.clip_frames == 0 || !d.clip_frames.is_multiple_of(self.tokenizer.downsample) {
            return Err(CliError::config(format!(
                "data.clip_frames ({}) must be a positive multiple of tokenizer.downsample ({})",
                d.clip_frames, self.tokenizer.downsample
            )));
        }
        if !(0.0..1.0).contains(&d.eval_fraction) {
            return Err(CliError::config("data.eval_fraction must lie in [0, 1)"));
        }
        if d.source == DataSource::Synthetic && d.count == 0 {
            return Err(CliError::config("data.count must be positive"));
        }
        if d.source == DataSource::Files && d.paths.is_empty() {
            return Err(CliError::config("data.source = \"files\" needs data.paths"));
        }
        if self.lm.visual_channels != self.tokenizer.feature_channels {
            return Err(CliError::config(format!(
                "lm.visual_channels ({}) must equal tokenizer.feature_channels ({})",
                self.lm.visual_channels, self.tokenizer.feature_channels
            )));
        }
        if self.eval.cosine_bins == 0 || self.eval.sphere_joint >= self.tokenizer.joints {
            return Err(CliError::config("eval.cosine_bins must be positive and eval.sphere_joint a valid joint"));
        }
        Ok(())
    }

    pub fn check_paths(&self) -> Result<(), CliError> {
        if self.data.source == DataSource::Files {
            if let Some(p) = self.data.paths.iter().find(|p| !p.exists()) {
                return Err(CliError::config(format!("data path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Points the data section at `path` instead.
    pub fn use_data_path(&mut self, path: &Path) -> Result<(), CliError> {
        self.data.source = DataSource::Files;
        self.data.paths = vec![path.to_path_buf()];
        self.check_paths()
    }
}
