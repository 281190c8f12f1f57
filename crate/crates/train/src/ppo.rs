//! Clipped-surrogate PPO loss, its gradient, and the minibatch update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adam::Adam;
use crate::dist;
use crate::net::{Forward, PolicyNet, Scratch};
use crate::rollout::RolloutBuffer;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in epoch {epoch}: {diagnostics:?}")]
    NonFinite {
        epoch: usize,
        diagnostics: Diagnostics,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over the step budget.
    pub lr_decay: bool,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_length: usize,
    pub n_envs: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            lr_decay: true,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_length: 128,
            n_envs: 4,
            minibatch_size: 256,
            epochs: 4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma must lie in (0, 1] and gae_lambda in [0, 1]".into());
        }
        if self.rollout_length == 0
            || self.n_envs == 0
            || self.minibatch_size == 0
            || self.epochs == 0
        {
            return bad(
                "rollout_length, n_envs, minibatch_size and epochs must be positive".into(),
            );
        }
        if !(self.n_envs * self.rollout_length).is_multiple_of(self.minibatch_size) {
            return bad(format!(
                "minibatch_size {} does not divide n_envs x rollout_length = {}",
                self.minibatch_size,
                self.n_envs * self.rollout_length
            ));
        }
        if self.value_coef < 0.0
            || self.entropy_coef < 0.0
            || self.max_grad_norm.is_nan()
            || self.max_grad_norm <= 0.0
        {
            return bad(
                "value_coef and entropy_coef must be non-negative, max_grad_norm positive".into(),
            );
        }
        Ok(())
    }

    /// `learning_rate * (1 - step / total_steps)`, or constant without decay.
    pub fn lr_at(&self, step: u64, total_steps: u64) -> f64 {
        if !self.lr_decay {
            return self.learning_rate;
        }
        let frac = 1.0 - step.min(total_steps) as f64 / total_steps as f64;
        self.learning_rate * frac
    }
}

/// Averages over every minibatch of the last update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub learning_rate: f64,
}

/// Flattened training samples for one minibatch.
#[derive(Debug, Clone, Default)]
pub struct Batch<T> {
    /// `len x input_len` NHWC observations.
    pub obs: Vec<T>,
    /// `len x n_components` action indices.
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossCoefs {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&PpoConfig> for LossCoefs {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip_epsilon: c.clip_epsilon,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

/// Terms of the minibatch loss, as plain numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Reusable forward and backward buffers.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    pub fwd: Forward<T>,
    pub scratch: Scratch<T>,
}

impl<T> Workspace<T> {
    /// Gradient left by the last [`loss_and_grad`] call.
    pub fn grads(&self) -> &[T] {
        &self.scratch.grads
    }
}

/// Loss `pg + value_coef * mse - entropy_coef * entropy` with all terms
/// averaged over the batch.
pub fn loss<T: Scalar>(net: &PolicyNet<T>, batch: &Batch<T>, coefs: LossCoefs) -> LossParts {
    let mut ws = Workspace::default();
    loss_impl(net, batch, coefs, false, &mut ws)
}

/// [`loss`] plus its parameter gradient, left in `ws.scratch.grads`.
pub fn loss_and_grad<T: Scalar>(
    net: &PolicyNet<T>,
    batch: &Batch<T>,
    coefs: LossCoefs,
    ws: &mut Workspace<T>,
) -> LossParts {
    loss_impl(net, batch, coefs, true, ws)
}

fn loss_impl<T: Scalar>(
    net: &PolicyNet<T>,
    batch: &Batch<T>,
    coefs: LossCoefs,
    grad: bool,
    ws: &mut Workspace<T>,
) -> LossParts {
    let n = batch.len();
    let arities = net.architecture().arities.clone();
    let (n_comp, n_logits) = (arities.len(), net.architecture().n_logits());
    net.forward_into(&batch.obs, n, &mut ws.fwd);
    let fwd = &ws.fwd;
    let inv_n = T::one() / T::from_f64(n as f64);
    let eps = T::from_f64(coefs.clip_epsilon);
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    let vf = T::from_f64(coefs.value_coef);
    let ent = T::from_f64(coefs.entropy_coef);

    let mut dlogits = vec![T::zero(); n * n_logits];
    let mut dvalues = vec![T::zero(); n];
    let mut parts = LossParts::default();
    for i in 0..n {
        let logits = &fwd.logits[i * n_logits..(i + 1) * n_logits];
        let actions = &batch.actions[i * n_comp..(i + 1) * n_comp];
        let logp = dist::log_softmax(logits, &arities);
        let lp = dist::log_prob(&logp, &arities, actions);
        let log_ratio = lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let surr1 = ratio * adv;
        let surr2 = ratio.max(lo).min(hi) * adv;
        let unclipped = surr1 <= surr2;
        parts.policy_loss -= surr1.min(surr2).to_f64();
        if (ratio - T::one()).abs() > eps {
            parts.clip_fraction += 1.0;
        }
        parts.approx_kl += ((ratio - T::one()) - log_ratio).to_f64();
        let h = dist::entropy(&logp);
        parts.entropy += h.to_f64();
        let err = fwd.values[i] - batch.returns[i];
        parts.value_loss += (err * err).to_f64();

        if grad {
            // d(-surrogate)/d(log prob) is -ratio * adv on the unclipped branch.
            let g_lp = if unclipped { -(ratio * adv) } else { T::zero() };
            let d = &mut dlogits[i * n_logits..(i + 1) * n_logits];
            let mut start = 0;
            for (&k, &a) in arities.iter().zip(actions) {
                let comp = &logp[start..start + k];
                let h_c: T = comp.iter().map(|&l| -(l.exp() * l)).sum();
                for j in 0..k {
                    let p = comp[j].exp();
                    let onehot = if j == a { T::one() } else { T::zero() };
                    let d_lp = onehot - p;
                    // dH/dz_j = -p_j (log p_j + H)
                    let d_h = -(p * (comp[j] + h_c));
                    d[start + j] = (g_lp * d_lp - ent * d_h) * inv_n;
                }
                start += k;
            }
            dvalues[i] = vf * T::from_f64(2.0) * err * inv_n;
        }
    }
    let nf = n as f64;
    parts.policy_loss /= nf;
    parts.value_loss /= nf;
    parts.entropy /= nf;
    parts.clip_fraction /= nf;
    parts.approx_kl /= nf;
    parts.total = parts.policy_loss + coefs.value_coef * parts.value_loss
        - coefs.entropy_coef * parts.entropy;
    if grad {
        net.backward_into(&batch.obs, &ws.fwd, &dlogits, &dvalues, &mut ws.scratch);
    }
    parts
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|&g| f64::from(g) * f64::from(g))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / (norm + 1e-6)) as f32;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Runs `epochs` passes of shuffled minibatch updates over the buffer.
/// Advantages are normalized over the whole buffer first.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNet<f32>,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<Diagnostics, PpoError> {
    let n = buffer.len();
    let mut diag = Diagnostics {
        learning_rate: lr,
        ..Diagnostics::default()
    };
    if n == 0 {
        return Ok(diag);
    }
    let advantages = buffer.normalized_advantages();
    let returns = buffer.returns();
    let coefs = LossCoefs::from(cfg);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batches = 0usize;
    let mut batch = Batch::default();
    let mut ws = Workspace::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            buffer.gather_into(chunk, &advantages, &returns, &mut batch);
            let parts = loss_and_grad(net, &batch, coefs, &mut ws);
            let grads = &mut ws.scratch.grads;
            if !parts.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(PpoError::NonFinite {
                    epoch,
                    diagnostics: accumulate(diag, parts),
                });
            }
            clip_grad_norm(grads, cfg.max_grad_norm);
            adam.step(net.params_mut(), grads, lr);
            diag = accumulate(diag, parts);
            batches += 1;
        }
    }
    let b = batches as f64;
    diag.policy_loss /= b;
    diag.value_loss /= b;
    diag.entropy /= b;
    diag.clip_fraction /= b;
    diag.approx_kl /= b;
    Ok(diag)
}

fn accumulate(mut d: Diagnostics, p: LossParts) -> Diagnostics {
    d.policy_loss += p.policy_loss;
    d.value_loss += p.value_loss;
    d.entropy += p.entropy;
    d.clip_fraction += p.clip_fraction;
    d.approx_kl += p.approx_kl;
    d
}
