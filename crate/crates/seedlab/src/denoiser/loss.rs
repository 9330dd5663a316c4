//! Training losses and their exact analytic gradients.

use serde::{Deserialize, Serialize};

use crate::denoiser::network::{DenoiserParams, ForwardCache};
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::schedule::{forward_diffuse, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Simple,
    Hybrid,
}

/// One training example: clean point, time step, the noise that was injected
/// and the (possibly dropped) condition.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x0: Tensor,
    pub t: usize,
    pub eps: Tensor,
    pub class: Option<usize>,
}

/// Noise-prediction objective: || eps - eps_theta(x_t, t, c) ||^2 with
/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
pub fn loss_simple(
    params: &DenoiserParams,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    class: Option<usize>,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x_t = forward_diffuse(x0, t, eps, sched)?;
    let (eps_hat, _) = params.predict(&x_t, t, class)?;
    Ok(eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&p, &e)| (p - e) * (p - e))
        .sum())
}

/// Simple loss plus lambda_vlb times the KL between the forward posterior
/// q(x_{t-1} | x_t, x_0) and p_theta(x_{t-1} | x_t).
///
/// The predicted mean is detached inside the KL: only the variance head
/// receives gradient from that term. The t = 1 posterior variance is clipped
/// to its t = 2 value so the term stays finite.
pub fn loss_hybrid(
    params: &DenoiserParams,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    class: Option<usize>,
    sched: &NoiseSchedule,
    lambda_vlb: f64,
) -> Result<f64> {
    loss_hybrid_detached(params, params, x0, t, eps, class, sched, lambda_vlb)
}

/// Two-parameter form of the hybrid loss that makes the stop-gradient
/// explicit: the KL's predicted mean comes from `mean_params` while the
/// simple term and the variance interpolation come from `params`.
///
/// `loss_hybrid` is the diagonal `mean_params == params`. The gradient that
/// `grad` reports for the hybrid variant is the exact partial derivative of
/// this function in its first argument, which is what central finite
/// differences must probe.
#[allow(clippy::too_many_arguments)]
pub fn loss_hybrid_detached(
    params: &DenoiserParams,
    mean_params: &DenoiserParams,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    class: Option<usize>,
    sched: &NoiseSchedule,
    lambda_vlb: f64,
) -> Result<f64> {
    if !params.has_variance_head() {
        return Err(Error::MissingVarianceHead);
    }
    let x_t = forward_diffuse(x0, t, eps, sched)?;
    let (eps_hat, v) = params.predict(&x_t, t, class)?;
    let v = v.expect("variance head checked above");

    let simple: f64 = eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&p, &e)| (p - e) * (p - e))
        .sum();

    let eps_for_mean = if std::ptr::eq(params, mean_params) {
        eps_hat
    } else {
        mean_params.predict(&x_t, t, class)?.0
    };
    let kl = kl_term(sched, t, x0, &x_t, eps_for_mean.data(), v.data());
    Ok(simple + lambda_vlb * kl)
}

/// Per-element Gaussian KL summed over the state, with the mean detached.
fn kl_term(sched: &NoiseSchedule, t: usize, x0: &Tensor, x_t: &Tensor, eps_hat: &[f64], v: &[f64]) -> f64 {
    let sigma1_sq = sched.beta_tilde_clipped(t);
    let ln_sigma1_sq = libm::log(sigma1_sq);
    let ln_beta = libm::log(sched.beta(t));
    let (c0, ct) = sched.posterior_mean_coeffs(t);
    let mean_scale = 1.0 / sched.alpha(t).sqrt();
    let eps_coeff = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();

    let mut kl = 0.0;
    for i in 0..x0.len() {
        let mu_q = c0 * x0.data()[i] + ct * x_t.data()[i];
        let mu_p = mean_scale * (x_t.data()[i] - eps_coeff * eps_hat[i]);
        let ln_sigma2_sq = v[i] * ln_beta + (1.0 - v[i]) * ln_sigma1_sq;
        let sigma2_sq = libm::exp(ln_sigma2_sq);
        let delta = mu_q - mu_p;
        kl += 0.5 * (ln_sigma2_sq - ln_sigma1_sq) + (sigma1_sq + delta * delta) / (2.0 * sigma2_sq)
            - 0.5;
    }
    kl
}

/// Mean loss over a batch and its exact gradient with respect to every
/// parameter, by straight backpropagation through the MLP.
pub fn grad(
    params: &DenoiserParams,
    batch: &[TrainSample],
    sched: &NoiseSchedule,
    variant: LossVariant,
    lambda_vlb: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("gradient over an empty batch".into()));
    }
    if variant == LossVariant::Hybrid && !params.has_variance_head() {
        return Err(Error::MissingVarianceHead);
    }
    let mut g = vec![0.0; params.theta().len()];
    let mut total = 0.0;
    for sample in batch {
        total += backprop_one(params, sample, sched, variant, lambda_vlb, &mut g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for gi in g.iter_mut() {
        *gi *= inv;
    }
    Ok((total * inv, g))
}

fn backprop_one(
    params: &DenoiserParams,
    sample: &TrainSample,
    sched: &NoiseSchedule,
    variant: LossVariant,
    lambda_vlb: f64,
    g: &mut [f64],
) -> Result<f64> {
    let arch = params.arch();
    let layout = params.layout();
    let t = sample.t;
    let x_t = forward_diffuse(&sample.x0, t, &sample.eps, sched)?;
    let cache: ForwardCache = params.forward_cached(&x_t, t, sample.class)?;
    let d = arch.data_dim;

    // Loss and the head-level gradients.
    let mut loss = 0.0;
    let mut d_eps = vec![0.0; d];
    for i in 0..d {
        let diff = cache.eps_hat[i] - sample.eps.data()[i];
        loss += diff * diff;
        d_eps[i] = 2.0 * diff;
    }

    let mut d_vraw = vec![0.0; d];
    if variant == LossVariant::Hybrid {
        let v = cache.v.as_ref().expect("hybrid requires variance head");
        let sigma1_sq = sched.beta_tilde_clipped(t);
        let ln_sigma1_sq = libm::log(sigma1_sq);
        let ln_beta = libm::log(sched.beta(t));
        let (c0, ct) = sched.posterior_mean_coeffs(t);
        let mean_scale = 1.0 / sched.alpha(t).sqrt();
        let eps_coeff = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
        for i in 0..d {
            let mu_q = c0 * sample.x0.data()[i] + ct * x_t.data()[i];
            // Detached: no gradient flows from the KL into eps_hat.
            let mu_p = mean_scale * (x_t.data()[i] - eps_coeff * cache.eps_hat[i]);
            let ln_sigma2_sq = v[i] * ln_beta + (1.0 - v[i]) * ln_sigma1_sq;
            let sigma2_sq = libm::exp(ln_sigma2_sq);
            let delta = mu_q - mu_p;
            loss += lambda_vlb
                * (0.5 * (ln_sigma2_sq - ln_sigma1_sq)
                    + (sigma1_sq + delta * delta) / (2.0 * sigma2_sq)
                    - 0.5);
            let d_ln_sigma2 = 0.5 - (sigma1_sq + delta * delta) / (2.0 * sigma2_sq);
            let d_v = d_ln_sigma2 * (ln_beta - ln_sigma1_sq);
            d_vraw[i] = lambda_vlb * d_v * v[i] * (1.0 - v[i]);
        }
    }

    // Heads back into the last hidden layer.
    let last_hidden = cache.hidden.last().unwrap();
    let last_dim = last_hidden.len();
    let mut d_hidden = vec![0.0; last_dim];
    for i in 0..d {
        let w_row = layout.eps_w + i * last_dim;
        g[layout.eps_b + i] += d_eps[i];
        for k in 0..last_dim {
            g[w_row + k] += d_eps[i] * last_hidden[k];
            d_hidden[k] += params.theta()[w_row + k] * d_eps[i];
        }
    }
    if let (Some(vw), Some(vb)) = (layout.v_w, layout.v_b) {
        for i in 0..d {
            if d_vraw[i] == 0.0 {
                continue;
            }
            let w_row = vw + i * last_dim;
            g[vb + i] += d_vraw[i];
            for k in 0..last_dim {
                g[w_row + k] += d_vraw[i] * last_hidden[k];
                d_hidden[k] += params.theta()[w_row + k] * d_vraw[i];
            }
        }
    }

    // Hidden layers, last to first.
    let mut d_post = d_hidden;
    for (l, &(w_off, b_off, out, inp)) in layout.layers.iter().enumerate().rev() {
        let post = &cache.hidden[l];
        let below: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let mut d_below = vec![0.0; inp];
        for o in 0..out {
            let d_pre = d_post[o] * (1.0 - post[o] * post[o]);
            if d_pre == 0.0 {
                continue;
            }
            g[b_off + o] += d_pre;
            let w_row = w_off + o * inp;
            for k in 0..inp {
                g[w_row + k] += d_pre * below[k];
                d_below[k] += params.theta()[w_row + k] * d_pre;
            }
        }
        d_post = d_below;
    }

    // d_post is now the gradient on the input vector; its class-embedding
    // slice flows into the embedding table.
    let emb_off = layout.emb + cache.emb_row * arch.class_dim;
    let emb_slice = &d_post[arch.data_dim + arch.time_dim..];
    for (k, &dv) in emb_slice.iter().enumerate() {
        g[emb_off + k] += dv;
    }

    Ok(loss)
}
