//! Pipeline configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::Endpoints;
use crate::placer::{PlacerParams, ScoringWeights};
use crate::scene::Room;
use crate::view_mask::{MaskParams, RoomViewParams, StopPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionParams {
    /// Inpainted samples drawn per view before moving on.
    pub samples_per_view: usize,
    pub min_count_room: usize,
    pub min_count_small: usize,
    pub max_attempts: usize,
    /// Set when the depth backend reports distance along the ray.
    pub depth_is_ray_length: bool,
    /// Lateral field of view for object close-ups, degrees.
    pub object_fov_deg: f64,
    pub object_resolution: u32,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            samples_per_view: 2,
            min_count_room: 2,
            min_count_small: 3,
            max_attempts: 4,
            depth_is_ray_length: false,
            object_fov_deg: 60.0,
            object_resolution: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssetParams {
    /// JSON-lines catalog; proxy boxes are used when absent.
    pub catalog: Option<PathBuf>,
    pub lambda: f64,
    pub top_k: usize,
    pub embed_seed: u64,
}

impl Default for AssetParams {
    fn default() -> Self {
        Self { catalog: None, lambda: 0.5, top_k: 5, embed_seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Scripted offline backend; takes precedence over endpoints.
    pub mock: Option<PathBuf>,
    pub endpoints: Endpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub room: Option<Room>,
    /// Pre-arranged scene to extend instead of an empty room.
    pub scene: Option<PathBuf>,
    pub caption: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub backend: BackendConfig,
    pub views: RoomViewParams,
    pub stop: StopPolicy,
    pub mask: MaskParams,
    pub perception: PerceptionParams,
    pub scoring: ScoringWeights,
    pub placer: PlacerParams,
    pub assets: AssetParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            room: None,
            scene: None,
            caption: "a living room".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            backend: BackendConfig::default(),
            views: RoomViewParams::default(),
            stop: StopPolicy::default(),
            mask: MaskParams::default(),
            perception: PerceptionParams::default(),
            scoring: ScoringWeights::default(),
            placer: PlacerParams::default(),
            assets: AssetParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.scene.as_mut().map(rebase);
        cfg.backend.mock.as_mut().map(rebase);
        cfg.assets.catalog.as_mut().map(rebase);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        match (&self.room, &self.scene) {
            (Some(_), Some(_)) => return bad("give either `room` or `scene`, not both"),
            (None, None) => return bad("one of `room` or `scene` is required"),
            (Some(room), None) => room.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            _ => {}
        }
        if self.perception.max_attempts == 0 || self.perception.samples_per_view == 0 {
            return bad("max_attempts and samples_per_view must be at least 1");
        }
        if !(self.placer.grid_step > 0.0) || self.placer.branch == 0 {
            return bad("grid_step must be positive and branch at least 1");
        }
        if !(self.assets.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}
