//! Noise schedule and the forward diffusion process shared by both sampler
//! families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Beta/alpha/alpha-bar tables for T steps, 1-indexed via the accessors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linear beta schedule inclusive of both endpoints.
///
/// The desk-scale default is T=100 with beta 1e-3..0.2: the DDPM reference
/// range 1e-4..0.02 at T=1000, scaled by 1000/T so that alpha_bar_T stays
/// below 1e-2 and x_T is statistically indistinguishable from the seed prior.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Parameter(format!(
            "schedule needs at least 2 steps, got {steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Parameter(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let mut beta = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for i in 0..steps {
        let b = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
        let a = 1.0 - b;
        prod *= a;
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule { steps, beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "time step {t} outside 1..={}",
                self.steps
            )))
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// alpha_bar_{t-1} with the alpha_bar_0 := 1 convention.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// Posterior variance of q(x_{t-1} | x_t, x_0):
    /// beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// beta_tilde with the t = 1 value (which is exactly zero) clipped to the
    /// t = 2 value, so log-variances stay finite everywhere.
    pub fn beta_tilde_clipped(&self, t: usize) -> f64 {
        if t <= 1 {
            self.beta_tilde(2)
        } else {
            self.beta_tilde(t)
        }
    }

    /// Coefficients (c0, ct) of the posterior mean
    /// mu_tilde = c0 * x_0 + ct * x_t.
    pub fn posterior_mean_coeffs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }
}

/// Closed-form marginal draw: sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    x0.check_same_shape(eps)?;
    let a = sched.alpha_bar(t).sqrt();
    let b = (1.0 - sched.alpha_bar(t)).sqrt();
    x0.zip(eps, |x, e| a * x + b * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn constant_schedule_products() {
        let s = linear_schedule(2, 0.1, 0.1).unwrap();
        assert_eq!(s.beta(1), 0.1);
        assert_eq!(s.beta(2), 0.1);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn cumulative_product_matches_direct_oracle() {
        let s = linear_schedule(100, 1e-4, 0.02).unwrap();
        // Straight-line recomputation of the product.
        let mut prod = 1.0;
        for t in 1..=100 {
            let b = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 99.0;
            prod *= 1.0 - b;
        }
        assert!((s.alpha_bar(100) - prod).abs() < 1e-15);
        assert!((prod - 0.3635632480554919).abs() < 1e-12);
    }

    #[test]
    fn single_step_schedule_rejected() {
        assert!(linear_schedule(1, 0.1, 0.1).is_err());
        assert!(linear_schedule(10, 0.0, 0.1).is_err());
        assert!(linear_schedule(10, 0.2, 0.1).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_and_small_at_end() {
        let s = linear_schedule(100, 1e-3, 0.2).unwrap();
        for t in 2..=100 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        // Default desk-scale schedule leaves essentially pure noise at T.
        assert!(s.alpha_bar(100) <= 0.01, "alpha_bar_T = {}", s.alpha_bar(100));
    }

    #[test]
    fn forward_diffuse_branches() {
        let s = linear_schedule(10, 1e-3, 0.2).unwrap();
        let x0 = Tensor::from_vec(vec![1.0, -2.0]).unwrap();
        let zero = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let t = 4;

        let noiseless = forward_diffuse(&x0, t, &zero, &s).unwrap();
        let c = s.alpha_bar(t).sqrt();
        assert!((noiseless.data()[0] - c).abs() < 1e-15);
        assert!((noiseless.data()[1] + 2.0 * c).abs() < 1e-15);

        let eps = Tensor::from_vec(vec![0.5, 0.25]).unwrap();
        let pure_noise = forward_diffuse(&zero, t, &eps, &s).unwrap();
        let d = (1.0 - s.alpha_bar(t)).sqrt();
        assert!((pure_noise.data()[0] - 0.5 * d).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = linear_schedule(10, 1e-3, 0.2).unwrap();
        let x0 = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let eps = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(forward_diffuse(&x0, 1, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 0, &x0, &s).is_err());
        assert!(forward_diffuse(&x0, 11, &x0, &s).is_err());
    }

    /// Monte-Carlo agreement between the closed-form marginal and the
    /// iterated one-step kernel q(x_t | x_{t-1}) = N(sqrt(1-beta_t) x_{t-1}, beta_t I).
    #[test]
    fn marginal_matches_iterated_kernel_moments() {
        let sched = linear_schedule(10, 0.05, 0.2).unwrap();
        let t = 3;
        let x0 = 0.7;
        let n = 100_000usize;
        let rng = SeededRng::new(99);

        let mut kernel_rng = rng.child("kernel");
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut x = x0;
            for step in 1..=t {
                let b = sched.beta(step);
                x = (1.0 - b).sqrt() * x + b.sqrt() * kernel_rng.standard_normal();
            }
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;

        let want_mean = sched.alpha_bar(t).sqrt() * x0;
        let want_var = 1.0 - sched.alpha_bar(t);
        let bound = 4.0 / (n as f64).sqrt();
        assert!((mean - want_mean).abs() < bound, "{mean} vs {want_mean}");
        assert!((var - want_var).abs() < bound, "{var} vs {want_var}");

        // And the closed-form marginal itself.
        let mut marg_rng = rng.child("marginal");
        let x0t = Tensor::from_vec(vec![x0]).unwrap();
        let mut msum = 0.0;
        for _ in 0..n {
            let eps = marg_rng.sample_standard_normal(&[1]).unwrap();
            msum += forward_diffuse(&x0t, t, &eps, &sched).unwrap().data()[0];
        }
        assert!((msum / n as f64 - want_mean).abs() < bound);
    }

    #[test]
    fn posterior_identities() {
        let s = linear_schedule(50, 1e-3, 0.2).unwrap();
        for t in 2..=50 {
            let bt = s.beta_tilde(t);
            assert!(bt > 0.0 && bt < s.beta(t));
        }
        assert_eq!(s.beta_tilde(1), 0.0);
        assert_eq!(s.beta_tilde_clipped(1), s.beta_tilde(2));
        // Posterior mean coefficients sum to about sqrt(alpha_t) + small x0 term;
        // at t where x0 = x_t = 1 the posterior mean must lie between them.
        let (c0, ct) = s.posterior_mean_coeffs(10);
        assert!(c0 > 0.0 && ct > 0.0);
    }
}
