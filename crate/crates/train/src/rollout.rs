//! Experience collection across a set of environments and GAE.

use rand::Rng;
use thiserror::Error;
use wireframe_core::{ActionVector, Env, EnvError, Observation, StepResult};

use crate::dist;
use crate::net::PolicyNet;
use crate::ppo::Batch;

#[derive(Debug, Error)]
#[error("environment {env}: {source}")]
pub struct RolloutError {
    pub env: usize,
    #[source]
    pub source: EnvError,
}

/// Consecutive transitions of one environment.
#[derive(Debug, Clone, Default)]
pub struct Track {
    /// `len x input_len` observations fed to the policy.
    pub obs: Vec<f32>,
    /// `len x n_components` sampled action indices (before masking).
    pub actions: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Value of the final observation for truncated transitions, else 0.
    pub truncation_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub input_len: usize,
    pub n_components: usize,
    pub tracks: Vec<Track>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, input_len: usize, n_components: usize) -> Self {
        Self {
            input_len,
            n_components,
            tracks: vec![Track::default(); n_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.tracks.iter_mut().for_each(|t| *t = Track::default());
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, t) in self.tracks.iter().enumerate() {
            if flat < t.len() {
                return (i, flat);
            }
            flat -= t.len();
        }
        panic!("transition index out of range");
    }

    /// Advantages in track order, shifted and scaled to zero mean and unit
    /// variance; a zero-variance batch is only centered.
    pub fn normalized_advantages(&self) -> Vec<f32> {
        let all: Vec<f64> = self
            .tracks
            .iter()
            .flat_map(|t| t.advantages.iter().copied())
            .collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > 1e-12 { 1.0 / (std + 1e-8) } else { 1.0 };
        all.iter().map(|a| ((a - mean) * scale) as f32).collect()
    }

    pub fn returns(&self) -> Vec<f32> {
        self.tracks
            .iter()
            .flat_map(|t| t.returns.iter().map(|&r| r as f32))
            .collect()
    }

    /// Minibatch of the given flat indices.
    pub fn gather(&self, indices: &[usize], advantages: &[f32], returns: &[f32]) -> Batch<f32> {
        let mut b = Batch::default();
        self.gather_into(indices, advantages, returns, &mut b);
        b
    }

    /// [`gather`](Self::gather) into an existing batch.
    pub fn gather_into(
        &self,
        indices: &[usize],
        advantages: &[f32],
        returns: &[f32],
        b: &mut Batch<f32>,
    ) {
        b.obs.clear();
        b.actions.clear();
        b.old_log_probs.clear();
        b.advantages.clear();
        b.returns.clear();
        for &i in indices {
            let (k, t) = self.locate(i);
            let tr = &self.tracks[k];
            b.obs
                .extend_from_slice(&tr.obs[t * self.input_len..(t + 1) * self.input_len]);
            b.actions
                .extend_from_slice(&tr.actions[t * self.n_components..(t + 1) * self.n_components]);
            b.old_log_probs.push(tr.log_probs[t]);
            b.advantages.push(advantages[i]);
            b.returns.push(returns[i]);
        }
    }
}

/// GAE over one track. `bootstrap` is the value of the observation after the
/// last transition and is only used when that transition is not terminal.
/// Terminated transitions bootstrap with 0, truncated ones with their
/// `truncation_values` entry; the advantage sum is cut at both.
#[allow(clippy::too_many_arguments)]
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    terminated: &[bool],
    truncated: &[bool],
    truncation_values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(
        values.len() == n
            && terminated.len() == n
            && truncated.len() == n
            && truncation_values.len() == n
    );
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if terminated[t] {
            0.0
        } else if truncated[t] {
            truncation_values[t]
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        let carry = if terminated[t] || truncated[t] {
            0.0
        } else {
            next_adv
        };
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    adv
}

/// Fills advantages and returns (advantage + value) of every track.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64, bootstrap_values: &[f64]) {
    assert_eq!(
        bootstrap_values.len(),
        buffer.tracks.len(),
        "one bootstrap value per track"
    );
    for (t, &boot) in buffer.tracks.iter_mut().zip(bootstrap_values) {
        t.advantages = gae_advantages(
            &t.rewards,
            &t.values,
            &t.terminated,
            &t.truncated,
            &t.truncation_values,
            boot,
            gamma,
            lambda,
        );
        t.returns = t
            .advantages
            .iter()
            .zip(&t.values)
            .map(|(a, v)| a + v)
            .collect();
    }
}

pub fn encode_observations(obs: &[&Observation], input_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; obs.len() * input_len];
    for (chunk, o) in out.chunks_exact_mut(input_len).zip(obs) {
        o.write_rgb_f32(chunk);
    }
    out
}

/// Outcome of a rollout: how many environment steps it took and whether it
/// was cut short by the step limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutStats {
    pub steps: u64,
    pub hit_limit: bool,
}

/// Steps each environment in turn with sampled actions, `length` times, or
/// until `step_limit` total environment steps have been taken. Finished
/// episodes are reset in place. `observe` sees every step result.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout<R: Rng>(
    envs: &mut [Env],
    current: &mut [Observation],
    net: &PolicyNet<f32>,
    length: usize,
    step_limit: u64,
    rng: &mut R,
    buffer: &mut RolloutBuffer,
    observe: &mut dyn FnMut(usize, &StepResult),
) -> Result<RolloutStats, RolloutError> {
    let arch = net.architecture();
    let (input_len, n_logits) = (arch.input_len(), arch.n_logits());
    let arities = arch.arities.clone();
    buffer.clear();
    let mut steps = 0u64;
    let mut pending: Vec<(usize, usize, Observation)> = Vec::new();
    let mut hit_limit = false;
    'outer: for _ in 0..length {
        let refs: Vec<&Observation> = current.iter().collect();
        let input = encode_observations(&refs, input_len);
        let fwd = net.forward(&input, envs.len());
        for (e, env) in envs.iter_mut().enumerate() {
            if steps >= step_limit {
                hit_limit = true;
                break 'outer;
            }
            let logp = dist::log_softmax(&fwd.logits[e * n_logits..(e + 1) * n_logits], &arities);
            let action = dist::sample(&logp, &arities, rng);
            let lp = dist::log_prob(&logp, &arities, &action);
            let result = env
                .step(
                    ActionVector::from_indices(&action)
                        .map_err(|source| RolloutError { env: e, source })?,
                )
                .map_err(|source| RolloutError { env: e, source })?;
            steps += 1;
            observe(e, &result);
            let tr = &mut buffer.tracks[e];
            tr.obs
                .extend_from_slice(&input[e * input_len..(e + 1) * input_len]);
            tr.actions.extend_from_slice(&action);
            tr.log_probs.push(lp);
            tr.values.push(f64::from(fwd.values[e]));
            tr.rewards.push(result.reward);
            tr.terminated.push(result.terminated);
            tr.truncated.push(result.truncated);
            tr.truncation_values.push(0.0);
            if result.truncated {
                pending.push((e, tr.len() - 1, result.observation.clone()));
            }
            current[e] = if result.done() {
                env.reset(None)
                    .map_err(|source| RolloutError { env: e, source })?
            } else {
                result.observation
            };
        }
    }
    if steps >= step_limit {
        hit_limit = true;
    }
    if !pending.is_empty() {
        let refs: Vec<&Observation> = pending.iter().map(|p| &p.2).collect();
        let values = net
            .forward(&encode_observations(&refs, input_len), refs.len())
            .values;
        for ((e, t, _), v) in pending.iter().zip(values) {
            buffer.tracks[*e].truncation_values[*t] = f64::from(v);
        }
    }
    Ok(RolloutStats { steps, hit_limit })
}

/// Value estimates of the current observations, used to bootstrap GAE.
pub fn bootstrap_values(net: &PolicyNet<f32>, current: &[Observation]) -> Vec<f64> {
    let refs: Vec<&Observation> = current.iter().collect();
    let input = encode_observations(&refs, net.architecture().input_len());
    net.forward(&input, refs.len())
        .values
        .into_iter()
        .map(f64::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct expansion of the advantage sum up to the episode boundary.
    fn brute(
        rewards: &[f64],
        values: &[f64],
        done: &[bool],
        next_values: &[f64],
        g: f64,
        l: f64,
    ) -> Vec<f64> {
        (0..rewards.len())
            .map(|t| {
                let mut total = 0.0;
                for k in t..rewards.len() {
                    let delta = rewards[k] + g * next_values[k] - values[k];
                    total += (g * l).powi((k - t) as i32) * delta;
                    if done[k] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn single_terminated_transition() {
        let adv = gae_advantages(&[1.0], &[0.0], &[true], &[false], &[0.0], 123.0, 1.0, 1.0);
        assert_eq!(adv, vec![1.0]);
    }

    #[test]
    fn zero_rewards_and_values() {
        let adv = gae_advantages(
            &[0.0; 5],
            &[0.0; 5],
            &[false; 5],
            &[false; 5],
            &[0.0; 5],
            0.0,
            0.99,
            0.95,
        );
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn matches_direct_summation() {
        let r = [0.1, -0.2, 5.0, -0.01, 0.1, 0.3, -3.0];
        let v = [0.5, 0.2, -0.1, 0.7, 0.0, 1.1, 0.4];
        let term = [false, false, true, false, false, false, false];
        let trunc = [false, false, false, false, true, false, false];
        let tv = [0.0, 0.0, 0.0, 0.0, 2.5, 0.0, 0.0];
        let boot = -0.3;
        let next: Vec<f64> = (0..7)
            .map(|t| {
                if term[t] {
                    0.0
                } else if trunc[t] {
                    tv[t]
                } else if t + 1 < 7 {
                    v[t + 1]
                } else {
                    boot
                }
            })
            .collect();
        let done: Vec<bool> = (0..7).map(|t| term[t] || trunc[t]).collect();
        let got = gae_advantages(&r, &v, &term, &trunc, &tv, boot, 0.99, 0.95);
        let want = brute(&r, &v, &done, &next, 0.99, 0.95);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_guards_zero_variance() {
        let mut buf = RolloutBuffer::new(1, 1, 1);
        buf.tracks[0].advantages = vec![2.0; 4];
        assert_eq!(buf.normalized_advantages(), vec![0.0; 4]);
        buf.tracks[0].advantages = vec![1.0, 2.0, 3.0, 4.0];
        let n = buf.normalized_advantages();
        let mean: f32 = n.iter().sum::<f32>() / 4.0;
        let var: f32 = n.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    }
}
