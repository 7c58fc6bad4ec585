//! Pipeline configuration: one TOML file gathers every stage's knobs so a
//! run is fully described by (inputs, config).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pso::HandEstimationParams;
use crate::registration::RegistrationParams;
use crate::scenes::DatasetParams;
use crate::sdf::SdfParams;
use crate::selection::SelectionParams;

/// Aggregate configuration of the estimation pipeline and the synthetic
/// benchmark. Unknown keys are rejected at parse time; values are checked
/// by [`PipelineConfig::validate`] before a run starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Every stochastic stage draws from a stream derived
    /// from this value (model surface sampling, base sampling, swarm
    /// initialization), so one number reproduces a whole run. The nested
    /// `hand.pso.rng_seed` is overridden by the derived stream when the
    /// hand stage runs inside the pipeline.
    pub seed: u64,
    /// Number of points sampled on the object model surface.
    pub model_samples: usize,
    /// Cap on the segmented scene cloud fed to registration; larger
    /// clouds are stride subsampled down to this count.
    pub max_object_points: usize,
    /// Neighborhood size of normal estimation on backprojected clouds.
    pub normal_k: usize,
    /// Hand clearance below which a scene point is dropped as part of
    /// the hand, meters.
    pub segmentation_epsilon: f64,
    pub hand: HandEstimationParams,
    /// Resolution of the hand distance field used for segmentation and
    /// physical plausibility checks.
    pub sdf: SdfParams,
    pub registration: RegistrationParams,
    pub selection: SelectionParams,
    /// Synthetic dataset generation, used by the benchmark commands.
    pub dataset: DatasetParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model_samples: 1000,
            max_object_points: 4000,
            normal_k: 12,
            segmentation_epsilon: 0.003,
            hand: HandEstimationParams::default(),
            sdf: SdfParams::default(),
            registration: RegistrationParams::default(),
            selection: SelectionParams::default(),
            dataset: DatasetParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_samples < 4 {
            return Err(Error::InvalidInput(format!(
                "model_samples must be at least 4, got {}",
                self.model_samples
            )));
        }
        if self.max_object_points < 4 {
            return Err(Error::InvalidInput(format!(
                "max_object_points must be at least 4, got {}",
                self.max_object_points
            )));
        }
        if self.normal_k < 3 {
            return Err(Error::InvalidInput(format!(
                "normal_k must be at least 3, got {}",
                self.normal_k
            )));
        }
        if !(self.segmentation_epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "segmentation_epsilon must be positive, got {}",
                self.segmentation_epsilon
            )));
        }
        self.hand.validate()?;
        self.sdf.validate()?;
        self.registration.validate()?;
        self.selection.validate()?;
        self.dataset.validate()
    }

    /// Parses a config from TOML text. `origin` names the source in
    /// errors. Missing tables fall back to defaults; unknown keys and
    /// invalid values are errors.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Internal(format!("config to TOML: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_toml_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
