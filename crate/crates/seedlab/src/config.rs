//! Run configuration: a single TOML file drives every command.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::network::Architecture;
use crate::denoiser::{LossVariant, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::SyntheticDataset;
use crate::manifest::sha256_hex;
use crate::sampler::{Family, SamplerSpec, SigmaConvention};
use crate::schedule::{linear_schedule, NoiseSchedule};
use crate::shifts::SeedShift;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Gmm2d { classes: usize, radius: f64, sigma: f64 },
    BlobsNd { classes: usize, shape: Vec<usize>, separation: f64, sigma: f64 },
}

impl DatasetConfig {
    pub fn build(&self) -> Result<SyntheticDataset> {
        match self {
            DatasetConfig::Gmm2d { classes, radius, sigma } => {
                SyntheticDataset::gmm2d(*classes, *radius, *sigma)
            }
            DatasetConfig::BlobsNd { classes, shape, separation, sigma } => {
                SyntheticDataset::blobs_nd(shape.clone(), *classes, *separation, *sigma)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
    #[serde(default = "default_class_dim")]
    pub class_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_time_dim() -> usize {
    32
}
fn default_class_dim() -> usize {
    16
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            time_dim: default_time_dim(),
            class_dim: default_class_dim(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    pub family: Family,
    pub loss: LossVariant,
    pub guidance_scale: f64,
    #[serde(default = "default_sigma_convention")]
    pub sigma_convention: SigmaConvention,
}

fn default_sigma_convention() -> SigmaConvention {
    SigmaConvention::BetaTilde
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub p_uncond: f64,
    pub lambda_vlb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub replicates_per_class: usize,
    pub random: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
    /// (eta_s, eta_m) pairs.
    pub mixed: Vec<(f64, f64)>,
    pub arrangement: Vec<usize>,
    /// Also evaluate a guidance-off twin of every model on the random grid.
    #[serde(default)]
    pub guidance_comparison: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub paired_seeds: usize,
    pub shift: SeedShift,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub out_dir: String,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub architecture: ArchConfig,
    pub train: TrainSection,
    pub models: Vec<ModelConfig>,
    pub sweep: SweepConfig,
    pub trajectory: TrajectoryConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Dependency(format!("config {} unreadable: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Stable content hash of the parsed configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let dataset = self.dataset.build()?;
        self.schedule.build()?;
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                return Err(Error::Config(format!("duplicate model id {}", m.id)));
            }
            if m.id.is_empty() || m.id.contains('/') || m.id.contains(',') {
                return Err(Error::Config(format!(
                    "model id '{}' must be nonempty without '/' or ','",
                    m.id
                )));
            }
            if m.guidance_scale < 0.0 || !m.guidance_scale.is_finite() {
                return Err(Error::Config(format!(
                    "model {}: guidance_scale must be finite and >= 0",
                    m.id
                )));
            }
            match (m.family, m.loss) {
                (Family::LearnedVariance, LossVariant::Simple) => {
                    return Err(Error::Config(format!(
                        "model {}: learned variance requires the hybrid loss",
                        m.id
                    )));
                }
                (Family::FixedVariance, LossVariant::Hybrid) => {
                    return Err(Error::Config(format!(
                        "model {}: fixed variance pairs with the simple loss",
                        m.id
                    )));
                }
                _ => {}
            }
        }
        self.train_config(&self.models[0]).validate()?;
        if self.sweep.replicates_per_class == 0 {
            return Err(Error::Config("sweep.replicates_per_class must be positive".into()));
        }
        for &s in &self.sweep.std_dev {
            if 1.0 + s <= 0.0 {
                return Err(Error::Config(format!("std_dev scale {s} is degenerate")));
            }
        }
        for &(s, _) in &self.sweep.mixed {
            if 1.0 + s <= 0.0 {
                return Err(Error::Config(format!("mixed scale ({s}, _) is degenerate")));
            }
        }
        for &a in &self.sweep.arrangement {
            if a > 0 {
                let shape = &dataset.data_shape;
                let ok = shape.len() >= 2
                    && a <= shape[shape.len() - 1]
                    && a <= shape[shape.len() - 2];
                if !ok {
                    return Err(Error::Config(format!(
                        "arrangement block {a} does not fit dataset shape {shape:?}"
                    )));
                }
            }
        }
        if self.trajectory.paired_seeds == 0 {
            return Err(Error::Config("trajectory.paired_seeds must be positive".into()));
        }
        if self.architecture.time_dim < 2 || self.architecture.time_dim % 2 != 0 {
            return Err(Error::Config("architecture.time_dim must be even and >= 2".into()));
        }
        Ok(())
    }

    pub fn architecture_for(&self, model: &ModelConfig, dataset: &SyntheticDataset) -> Architecture {
        Architecture {
            data_dim: dataset.dim(),
            hidden: self.architecture.hidden.clone(),
            time_dim: self.architecture.time_dim,
            class_dim: self.architecture.class_dim,
            num_classes: dataset.num_classes(),
            variance_head: model.family == Family::LearnedVariance,
        }
    }

    pub fn train_config(&self, model: &ModelConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            p_uncond: self.train.p_uncond,
            loss: model.loss,
            lambda_vlb: self.train.lambda_vlb,
        }
    }

    pub fn sampler_spec(&self, model: &ModelConfig) -> SamplerSpec {
        SamplerSpec {
            family: model.family,
            guidance_scale: model.guidance_scale,
            sigma_convention: model.sigma_convention,
            steps: self.schedule.steps,
        }
    }

    pub fn sweep_shifts(&self) -> Vec<SeedShift> {
        crate::eval::expand_grid(
            &self.sweep.random,
            &self.sweep.mean,
            &self.sweep.std_dev,
            &self.sweep.mixed,
            &self.sweep.arrangement,
        )
    }

    pub fn random_grid_shifts(&self) -> Vec<SeedShift> {
        self.sweep.random.iter().map(|&r| SeedShift::random(r)).collect()
    }
}
