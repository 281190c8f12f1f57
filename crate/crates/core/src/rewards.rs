//! Reward and return formulations.
//!
//! Step rewards score IoU changes between consecutive states; the terminal
//! reward scores how close the reconstruction line ended up to its
//! best-matching edge. Clipped schemes rewrite only the final reward of an
//! episode so that an ordinary discounted accumulation of the emitted rewards
//! lands exactly on the clipped return.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iou::Iou;

pub const IOU_GAIN: f64 = 0.1;
pub const IOU_LOSS: f64 = -0.2;
pub const IDLE_AT_ZERO: f64 = -0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("distance must be a non-negative number, got {0}")]
    BadDistance(f64),
    #[error("episode already received its final reward")]
    AlreadyFinished,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("unknown reward scheme `{0}` (expected sparse|incremental|combined|clip|clip_plus)")]
    UnknownScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// Terminal distance reward only.
    Sparse,
    /// IoU step rewards only.
    Incremental,
    Combined,
    /// Combined, with the discounted return capped at `mu`.
    Clip,
    /// Combined, with the discounted return capped at a positive terminal reward.
    ClipPlus,
}

impl RewardScheme {
    pub const ALL: [RewardScheme; 5] = [
        RewardScheme::Sparse,
        RewardScheme::Incremental,
        RewardScheme::Combined,
        RewardScheme::Clip,
        RewardScheme::ClipPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardScheme::Sparse => "sparse",
            RewardScheme::Incremental => "incremental",
            RewardScheme::Combined => "combined",
            RewardScheme::Clip => "clip",
            RewardScheme::ClipPlus => "clip_plus",
        }
    }

    fn uses_step_rewards(self) -> bool {
        !matches!(self, RewardScheme::Sparse)
    }

    fn uses_terminal_reward(self) -> bool {
        !matches!(self, RewardScheme::Incremental)
    }
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardScheme {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewardScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| RewardError::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub scheme: RewardScheme,
    /// Range of the terminal reward, which lies in `[-mu, mu]`.
    pub mu: f64,
    /// Slope of the terminal reward; it crosses zero at distance `d_t / 2`.
    pub d_t: f64,
    /// Must match the learner's discount for the clipped schemes to be exact.
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            scheme: RewardScheme::Combined,
            mu: 5.0,
            d_t: 30.0,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.d_t > 0.0 && self.d_t.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "d_t must be positive, got {}",
                self.d_t
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(RewardError::InvalidConfig(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// IoU-change reward between consecutive states.
///
/// A loss is punished harder than a gain is rewarded, so oscillating between
/// two states costs reward on every round trip.
pub fn step_reward(prev: Iou, curr: Iou) -> f64 {
    match curr.cmp(&prev) {
        Ordering::Greater => IOU_GAIN,
        Ordering::Less => IOU_LOSS,
        Ordering::Equal if curr.is_zero() => IDLE_AT_ZERO,
        Ordering::Equal => 0.0,
    }
}

/// Terminal reward from the matched endpoint distance: `mu` at distance 0,
/// zero at `d_t / 2`, saturating at `-mu` from `d_t` onwards.
pub fn episodic_reward(distance: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
    if distance.is_nan() || distance < 0.0 {
        return Err(RewardError::BadDistance(distance));
    }
    Ok((cfg.mu * (1.0 - 2.0 * distance / cfg.d_t)).max(-cfg.mu))
}

/// Running discounted sum of the rewards emitted so far in one episode,
/// updated as `sum <- gamma * sum + r`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAccumulator {
    discounted_sum: f64,
    steps: u32,
    finished: bool,
}

impl EpisodeAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn discounted_sum(&self) -> f64 {
        self.discounted_sum
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    fn push(&mut self, r: f64, gamma: f64) {
        self.discounted_sum = gamma * self.discounted_sum + r;
        self.steps += 1;
    }

    /// Emits the reward for a non-terminal step and records it.
    pub fn emit_step(&mut self, base: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
        if self.finished {
            return Err(RewardError::AlreadyFinished);
        }
        let r = if cfg.scheme.uses_step_rewards() {
            base
        } else {
            0.0
        };
        self.push(r, cfg.gamma);
        Ok(r)
    }

    /// Emits the final reward of the episode and closes the accumulator.
    /// Afterwards `discounted_sum` is the realized episode return.
    pub fn emit_final(
        &mut self,
        base: f64,
        e_t: f64,
        cfg: &RewardConfig,
    ) -> Result<f64, RewardError> {
        let r = final_step_reward(base, e_t, self, cfg)?;
        self.push(r, cfg.gamma);
        self.finished = true;
        Ok(r)
    }
}

/// The reward to emit on the last step of an episode.
///
/// `base` is the step reward of that last transition and `e_t` the terminal
/// distance reward. For the clipped schemes the result is chosen so that
/// `gamma * acc.discounted_sum() + r` equals the clipped return, never
/// exceeding it even after floating-point rounding.
pub fn final_step_reward(
    base: f64,
    e_t: f64,
    acc: &EpisodeAccumulator,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    if acc.finished {
        return Err(RewardError::AlreadyFinished);
    }
    let base = if cfg.scheme.uses_step_rewards() {
        base
    } else {
        0.0
    };
    let e_t = if cfg.scheme.uses_terminal_reward() {
        e_t
    } else {
        0.0
    };
    let raw = base + e_t;
    let prior = cfg.gamma * acc.discounted_sum;
    let unclipped = prior + raw;
    let cap = match cfg.scheme {
        RewardScheme::Clip => cfg.mu,
        RewardScheme::ClipPlus if e_t > 0.0 => e_t,
        _ => return Ok(raw),
    };
    if unclipped <= cap {
        return Ok(raw);
    }
    let mut r = cap - prior;
    while prior + r > cap {
        r = r.next_down();
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iou(v: f64) -> Iou {
        Iou::new((v * 100.0).round() as u32, 100).unwrap()
    }

    fn cfg(scheme: RewardScheme, gamma: f64) -> RewardConfig {
        RewardConfig {
            scheme,
            gamma,
            ..RewardConfig::default()
        }
    }

    fn acc_with(prior: &[f64], c: &RewardConfig) -> EpisodeAccumulator {
        let mut acc = EpisodeAccumulator::new();
        for &r in prior {
            acc.emit_step(r, c).unwrap();
        }
        acc
    }

    #[test]
    fn step_reward_branches() {
        assert_eq!(step_reward(iou(0.10), iou(0.20)), 0.1);
        assert_eq!(step_reward(Iou::ZERO, Iou::ZERO), -0.01);
        assert_eq!(step_reward(iou(0.30), iou(0.30)), 0.0);
        assert_eq!(step_reward(iou(0.20), iou(0.10)), -0.2);
    }

    #[test]
    fn oscillation_costs_reward() {
        let (a, b) = (Iou::new(3, 10).unwrap(), Iou::new(5, 11).unwrap());
        let cycle = step_reward(a, b) + step_reward(b, a);
        assert!((cycle - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn episodic_reward_examples() {
        let c = RewardConfig::default();
        assert_eq!(episodic_reward(0.0, &c).unwrap(), 5.0);
        assert_eq!(episodic_reward(c.d_t / 2.0, &c).unwrap(), 0.0);
        assert_eq!(episodic_reward(10.0 * c.d_t, &c).unwrap(), -5.0);
        assert!(episodic_reward(-1.0, &c).is_err());
        assert!(episodic_reward(f64::NAN, &c).is_err());
    }

    #[test]
    fn combined_is_additive() {
        let c = cfg(RewardScheme::Combined, 1.0);
        let mut acc = acc_with(&[0.1, 0.1, 0.1], &c);
        assert!((acc.discounted_sum() - 0.3).abs() < 1e-15);
        assert_eq!(acc.emit_final(0.0, 5.0, &c).unwrap(), 5.0);
        assert!((acc.discounted_sum() - 5.3).abs() < 1e-12);
    }

    #[test]
    fn clip_caps_at_mu() {
        let c = cfg(RewardScheme::Clip, 1.0);
        let mut acc = acc_with(&[1.0, 1.0], &c);
        let r = acc.emit_final(0.0, 5.0, &c).unwrap();
        assert_eq!(r, 3.0);
        assert_eq!(acc.discounted_sum(), 5.0);
    }

    #[test]
    fn clip_plus_passes_through_non_positive_terminal() {
        let c = cfg(RewardScheme::ClipPlus, 1.0);
        let mut acc = acc_with(&[1.0, 1.0], &c);
        assert_eq!(acc.emit_final(0.0, -3.0, &c).unwrap(), -3.0);
        assert_eq!(acc.discounted_sum(), -1.0);
    }

    #[test]
    fn sparse_and_incremental_masks() {
        let sparse = cfg(RewardScheme::Sparse, 0.99);
        let mut acc = EpisodeAccumulator::new();
        assert_eq!(acc.emit_step(0.1, &sparse).unwrap(), 0.0);
        assert_eq!(acc.emit_final(-0.01, 4.0, &sparse).unwrap(), 4.0);

        let inc = cfg(RewardScheme::Incremental, 0.99);
        let mut acc = EpisodeAccumulator::new();
        assert_eq!(acc.emit_step(0.1, &inc).unwrap(), 0.1);
        assert_eq!(acc.emit_final(-0.01, 4.0, &inc).unwrap(), -0.01);
    }

    #[test]
    fn final_reward_only_once() {
        let c = RewardConfig::default();
        let mut acc = EpisodeAccumulator::new();
        acc.emit_final(0.0, 1.0, &c).unwrap();
        assert_eq!(
            acc.emit_final(0.0, 1.0, &c),
            Err(RewardError::AlreadyFinished)
        );
        assert_eq!(acc.emit_step(0.0, &c), Err(RewardError::AlreadyFinished));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in RewardScheme::ALL {
            assert_eq!(s.name().parse::<RewardScheme>().unwrap(), s);
        }
        assert!("clipplus".parse::<RewardScheme>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        assert!(RewardConfig {
            mu: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RewardConfig {
            gamma: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RewardConfig {
            d_t: -2.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
