//! Versioned checkpoint container. Loading verifies the architecture hash
//! and refuses weights that were trained for a different topology.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::network::{Architecture, DenoiserParams};
use crate::denoiser::train::TrainConfig;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Architecture,
    pub arch_hash: String,
    pub schedule: NoiseSchedule,
    pub train_config: TrainConfig,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &DenoiserParams, schedule: &NoiseSchedule, train_config: &TrainConfig) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            arch: params.arch().clone(),
            arch_hash: params.arch().hash(),
            schedule: schedule.clone(),
            train_config: train_config.clone(),
            weights: params.theta().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        crate::manifest::write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Dependency(format!("checkpoint {} unreadable: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {} (supported: {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let expect = ckpt.arch.hash();
        if ckpt.arch_hash != expect {
            return Err(Error::CheckpointMismatch(format!(
                "architecture hash {} does not match recomputed {expect}",
                ckpt.arch_hash
            )));
        }
        Ok(ckpt)
    }

    pub fn into_params(self) -> Result<DenoiserParams> {
        DenoiserParams::new(self.arch, self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::schedule::linear_schedule;

    fn arch() -> Architecture {
        Architecture {
            data_dim: 2,
            hidden: vec![4],
            time_dim: 4,
            class_dim: 2,
            num_classes: 2,
            variance_head: true,
        }
    }

    #[test]
    fn round_trip_preserves_weights_bit_exactly() {
        let dir = std::env::temp_dir().join(format!("seedlab-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");

        let mut rng = SeededRng::new(9);
        let params = DenoiserParams::init(arch(), &mut rng).unwrap();
        let sched = linear_schedule(10, 1e-3, 0.2).unwrap();
        let ckpt = Checkpoint::new(&params, &sched, &TrainConfig::default());
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap().into_params().unwrap();
        assert_eq!(loaded.theta(), params.theta());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tampered_hash_is_refused() {
        let dir = std::env::temp_dir().join(format!("seedlab-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");

        let mut rng = SeededRng::new(9);
        let params = DenoiserParams::init(arch(), &mut rng).unwrap();
        let sched = linear_schedule(10, 1e-3, 0.2).unwrap();
        let mut ckpt = Checkpoint::new(&params, &sched, &TrainConfig::default());
        ckpt.arch_hash = "deadbeef".into();
        ckpt.save(&path).unwrap();

        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
