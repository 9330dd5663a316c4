//! Adam training loop with null-condition dropout for classifier-free
//! guidance.

use serde::{Deserialize, Serialize};

use crate::denoiser::loss::{grad, LossVariant, TrainSample};
use crate::denoiser::network::{Architecture, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::SeededRng;
use crate::schedule::NoiseSchedule;

/// Adam moment constants; fixed and recorded in run manifests.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Probability of replacing the condition with the null token per sample.
    pub p_uncond: f64,
    pub loss: LossVariant,
    pub lambda_vlb: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 4000,
            p_uncond: 0.1,
            loss: LossVariant::Simple,
            lambda_vlb: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.p_uncond) {
            return Err(Error::Config("p_uncond must lie in [0, 0.5]".into()));
        }
        if self.lambda_vlb < 0.0 {
            return Err(Error::Config("lambda_vlb must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Trains a denoiser against a (x0, class) sampler.
///
/// The draw function must be a pure function of its rng argument so training
/// stays bit-reproducible. Each optimization step derives its own child
/// stream keyed by the step index.
pub fn train(
    draw: impl Fn(&mut SeededRng) -> (Tensor, usize),
    sched: &NoiseSchedule,
    arch: Architecture,
    config: &TrainConfig,
    rng: &SeededRng,
) -> Result<DenoiserParams> {
    config.validate()?;
    if config.loss == LossVariant::Hybrid && !arch.variance_head {
        return Err(Error::MissingVarianceHead);
    }

    let mut init_rng = rng.child("init");
    let mut params = DenoiserParams::init(arch, &mut init_rng)?;
    let n = params.theta().len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    for step in 1..=config.steps {
        let mut step_rng = rng.child_indexed("step", step as u64);
        let batch: Vec<TrainSample> = (0..config.batch_size)
            .map(|_| {
                let (x0, class) = draw(&mut step_rng);
                let t = 1 + step_rng.uniform_usize(sched.steps());
                let eps = step_rng
                    .sample_standard_normal(x0.shape())
                    .expect("x0 shape is valid");
                let class = if step_rng.uniform() < config.p_uncond {
                    None
                } else {
                    Some(class)
                };
                TrainSample { x0, t, eps, class }
            })
            .collect();

        let (loss, g) = grad(&params, &batch, sched, config.loss, config.lambda_vlb)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }

        let t_adam = step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t_adam);
        let bc2 = 1.0 - ADAM_BETA2.powf(t_adam);
        let theta = params.theta_mut();
        for i in 0..n {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(params)
}

/// Mean loss of `params` over `n` freshly drawn samples; used for the
/// training-progress regression checks.
pub fn mean_loss(
    params: &DenoiserParams,
    draw: impl Fn(&mut SeededRng) -> (Tensor, usize),
    sched: &NoiseSchedule,
    config: &TrainConfig,
    rng: &SeededRng,
    n: usize,
) -> Result<f64> {
    let mut eval_rng = rng.child("eval");
    let batch: Vec<TrainSample> = (0..n)
        .map(|_| {
            let (x0, class) = draw(&mut eval_rng);
            let t = 1 + eval_rng.uniform_usize(sched.steps());
            let eps = eval_rng
                .sample_standard_normal(x0.shape())
                .expect("x0 shape is valid");
            TrainSample { x0, t, eps, class: Some(class) }
        })
        .collect();
    let (loss, _) = grad(params, &batch, sched, config.loss, config.lambda_vlb)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::linear_schedule;

    fn arch(variance_head: bool) -> Architecture {
        Architecture {
            data_dim: 2,
            hidden: vec![16, 16],
            time_dim: 8,
            class_dim: 4,
            num_classes: 3,
            variance_head,
        }
    }

    /// Three well-separated 2-D modes, one per class.
    fn draw_modes(rng: &mut SeededRng) -> (Tensor, usize) {
        let class = rng.uniform_usize(3);
        let centers = [[3.0, 0.0], [-1.5, 2.6], [-1.5, -2.6]];
        let x = Tensor::from_vec(vec![
            centers[class][0] + 0.3 * rng.standard_normal(),
            centers[class][1] + 0.3 * rng.standard_normal(),
        ])
        .unwrap();
        (x, class)
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let sched = linear_schedule(10, 1e-3, 0.2).unwrap();
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            steps: 3,
            ..TrainConfig::default()
        };
        let rng = SeededRng::new(1);
        let trained = train(draw_modes, &sched, arch(false), &config, &rng).unwrap();
        let mut init_rng = rng.child("init");
        let initial = DenoiserParams::init(arch(false), &mut init_rng).unwrap();
        assert_eq!(trained.theta(), initial.theta());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let sched = linear_schedule(10, 1e-3, 0.2).unwrap();
        let config = TrainConfig { batch_size: 8, steps: 20, ..TrainConfig::default() };
        let a = train(draw_modes, &sched, arch(false), &config, &SeededRng::new(5)).unwrap();
        let b = train(draw_modes, &sched, arch(false), &config, &SeededRng::new(5)).unwrap();
        assert_eq!(a.theta(), b.theta());
    }

    #[test]
    fn training_halves_the_loss_on_mixture_data() {
        let sched = linear_schedule(20, 1e-3, 0.2).unwrap();
        let config = TrainConfig { batch_size: 32, steps: 400, ..TrainConfig::default() };
        let rng = SeededRng::new(7);
        let mut init_rng = rng.child("init");
        let initial = DenoiserParams::init(arch(false), &mut init_rng).unwrap();
        let before = mean_loss(&initial, draw_modes, &sched, &config, &rng, 256).unwrap();
        let trained = train(draw_modes, &sched, arch(false), &config, &rng).unwrap();
        let after = mean_loss(&trained, draw_modes, &sched, &config, &rng, 256).unwrap();
        assert!(
            after < 0.5 * before,
            "loss went {before} -> {after}, wanted at least a 50% drop"
        );
    }

    #[test]
    fn hybrid_without_variance_head_rejected() {
        let sched = linear_schedule(10, 1e-3, 0.2).unwrap();
        let config = TrainConfig { loss: LossVariant::Hybrid, steps: 1, ..TrainConfig::default() };
        assert!(matches!(
            train(draw_modes, &sched, arch(false), &config, &SeededRng::new(1)),
            Err(Error::MissingVarianceHead)
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { p_uncond: 0.6, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
