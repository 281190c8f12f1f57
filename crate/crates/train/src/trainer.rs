//! The rollout/update loop with curriculum switching, periodic evaluation,
//! checkpoints and CSV logs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wireframe_core::{
    CurriculumKind, CurriculumSpec, Env, EnvConfig, EnvError, Observation, Phase, StepResult,
};

use crate::adam::Adam;
use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::config::{ConfigError, TrainConfig};
use crate::metrics::{self, append_log, EvalReport, GreedyPolicy, LogRow, MetricsError};
use crate::net::{Architecture, PolicyNet};
use crate::ppo::{ppo_update, Diagnostics, PpoError};
use crate::rollout::{bootstrap_values, collect_rollout, compute_gae, RolloutBuffer, RolloutError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid curriculum switch: {0}")]
    Switch(String),
    #[error("parameters became non-finite at step {step}; last good checkpoint kept")]
    NonFinite { step: u64 },
}

/// Everything the loop mutates.
pub struct TrainerState {
    pub net: PolicyNet<f32>,
    pub adam: Adam,
    pub envs: Vec<Env>,
    pub current: Vec<Observation>,
    pub buffer: RolloutBuffer,
    pub phase: Phase,
    pub kind: CurriculumKind,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

/// Curriculum switch as it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub step: u64,
    pub checksum_before: String,
    pub checksum_after: String,
    /// Steps of the straddling rollout fragment that were thrown away.
    pub discarded_steps: u64,
    pub buffer_len_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub scheme: String,
    pub curriculum: String,
    pub switch: Option<SwitchRecord>,
    pub final_checksum: String,
    pub evaluations: Vec<EvalReport>,
    /// Phase-one transitions executed, and how many moved the line tip.
    pub phase1_transitions: u64,
    pub phase1_tip_moves: u64,
    /// Steps per phase that ended in a policy update.
    pub trained_steps: [u64; 2],
}

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.txt";

impl TrainerState {
    pub fn new(cfg: &TrainConfig, spec: &CurriculumSpec) -> Result<Self, TrainError> {
        let (phase, env_cfg) = spec
            .phase_at(0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let seeds = metrics::derive_seeds(cfg.ppo.seed, cfg.ppo.n_envs + 2);
        let net = PolicyNet::<f32>::new(Architecture::nature_cnn(), seeds[0]);
        let envs = seeds[2..]
            .iter()
            .map(|&s| Env::new(env_cfg.clone(), cfg.reward_config(), s))
            .collect::<Result<Vec<_>, _>>()?;
        let current = envs.iter().map(Env::observation).collect();
        let arch = net.architecture();
        Ok(Self {
            adam: Adam::new(net.n_params()),
            buffer: RolloutBuffer::new(envs.len(), arch.input_len(), arch.arities.len()),
            net,
            envs,
            current,
            phase,
            kind: spec.kind,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seeds[1]),
        })
    }
}

/// Moves every environment to the phase-two configuration and starts fresh
/// episodes. Network and optimizer state are untouched and any buffered
/// experience is dropped.
pub fn apply_switch(state: &mut TrainerState, phase2: &EnvConfig) -> Result<(), TrainError> {
    if state.kind == CurriculumKind::None {
        return Err(TrainError::Switch(
            "the `none` curriculum has no switch".into(),
        ));
    }
    if state.phase == Phase::Two {
        return Err(TrainError::Switch("already in phase 2".into()));
    }
    for (env, obs) in state.envs.iter_mut().zip(state.current.iter_mut()) {
        env.reconfigure(phase2.clone())?;
        *obs = env.reset(None)?;
    }
    state.buffer.clear();
    state.phase = Phase::Two;
    Ok(())
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    spec: CurriculumSpec,
    out_dir: PathBuf,
    started: Instant,
    last_logged: Option<u64>,
    summary: TrainSummary,
}

impl Run<'_> {
    fn phase_config(&self, phase: Phase) -> &EnvConfig {
        match phase {
            Phase::One => &self.spec.phase1,
            Phase::Two => &self.spec.phase2,
        }
    }

    fn evaluate_and_log(
        &mut self,
        state: &TrainerState,
        diag: &Diagnostics,
    ) -> Result<(), TrainError> {
        if self.last_logged == Some(state.step) {
            return Ok(());
        }
        let env_cfg = self.phase_config(state.phase).clone();
        let reward = self.cfg.reward_config();
        let mut policy = GreedyPolicy::new(&state.net);
        let mut report = metrics::evaluate(
            &mut policy,
            &env_cfg,
            &reward,
            self.cfg.eval.episodes,
            self.cfg.eval.seed,
        )?;
        report.step = state.step;
        let row = LogRow {
            step: state.step,
            phase: state.phase.number(),
            mean_eval_iou: report.mean_eval_iou,
            mean_env_iou: report.mean_env_iou,
            success_rate: report.success_rate,
            mean_episode_length: report.mean_episode_length,
            policy_loss: diag.policy_loss,
            value_loss: diag.value_loss,
            entropy: diag.entropy,
            clip_fraction: diag.clip_fraction,
            approx_kl: diag.approx_kl,
            learning_rate: diag.learning_rate,
            wallclock_s: if self.cfg.log.wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        append_log(&self.out_dir.join(LOG_FILE), &row)?;
        if self.cfg.log.record {
            let path = self
                .out_dir
                .join(format!("episode_{}_{}.gif", state.step, self.cfg.eval.seed));
            metrics::record_episode(&mut policy, &env_cfg, &reward, self.cfg.eval.seed, &path)?;
        }
        save_checkpoint(
            &self.out_dir.join(CHECKPOINT_FILE),
            &state.net,
            state.step,
            state.phase.number(),
        )?;
        self.summary.evaluations.push(report);
        self.last_logged = Some(state.step);
        Ok(())
    }
}

/// Trains for `cfg.total_steps` environment steps, writing the log,
/// checkpoints, the resolved config and a summary into `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(PolicyNet<f32>, TrainSummary), TrainError> {
    cfg.validate()?;
    let spec = cfg.curriculum_spec()?;
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    if log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;

    let mut state = TrainerState::new(cfg, &spec)?;
    let switch_step = spec.switch_step();
    let total = spec.total_steps;
    let mut run = Run {
        cfg,
        spec,
        out_dir: out_dir.to_path_buf(),
        started: Instant::now(),
        last_logged: None,
        summary: TrainSummary {
            steps: 0,
            updates: 0,
            scheme: cfg.reward.scheme.name().to_string(),
            curriculum: cfg.curriculum.to_string(),
            switch: None,
            final_checksum: String::new(),
            evaluations: Vec::new(),
            phase1_transitions: 0,
            phase1_tip_moves: 0,
            trained_steps: [0, 0],
        },
    };
    let ppo = &cfg.ppo;
    let full_rollout = ppo.n_envs * ppo.rollout_length;
    let mut diag = Diagnostics {
        learning_rate: ppo.lr_at(0, total),
        ..Diagnostics::default()
    };
    let mut next_eval = cfg.eval.interval;

    while state.step < total {
        let boundary = match switch_step {
            Some(s) if state.phase == Phase::One && s > state.step => s,
            _ => total,
        };
        let start = state.step;
        let lr = ppo.lr_at(start, total);
        let phase = state.phase;
        let (mut transitions, mut tip_moves) = (0u64, 0u64);
        let mut audit = |_: usize, r: &StepResult| {
            if phase == Phase::One {
                transitions += 1;
                if r.applied.tip_dx != 0 || r.applied.tip_dy != 0 {
                    tip_moves += 1;
                }
            }
        };
        let stats = collect_rollout(
            &mut state.envs,
            &mut state.current,
            &state.net,
            ppo.rollout_length,
            boundary - start,
            &mut state.rng,
            &mut state.buffer,
            &mut audit,
        )?;
        run.summary.phase1_transitions += transitions;
        run.summary.phase1_tip_moves += tip_moves;
        state.step += stats.steps;

        let switching = state.phase == Phase::One && switch_step == Some(state.step);
        let complete = state.buffer.len() == full_rollout;
        if !switching || complete {
            let boot = bootstrap_values(&state.net, &state.current);
            compute_gae(&mut state.buffer, ppo.gamma, ppo.gae_lambda, &boot);
            diag = ppo_update(
                &mut state.net,
                &mut state.adam,
                &state.buffer,
                ppo,
                lr,
                &mut state.rng,
            )?;
            run.summary.updates += 1;
            run.summary.trained_steps[usize::from(state.phase.number() - 1)] += stats.steps;
            if !state.net.is_finite() {
                return Err(TrainError::NonFinite { step: state.step });
            }
        }
        if switching {
            let discarded = if complete { 0 } else { stats.steps };
            let checksum_before = state.net.checksum();
            let phase2 = run.spec.phase2.clone();
            apply_switch(&mut state, &phase2)?;
            run.summary.switch = Some(SwitchRecord {
                step: state.step,
                checksum_before,
                checksum_after: state.net.checksum(),
                discarded_steps: discarded,
                buffer_len_after: state.buffer.len(),
            });
            run.evaluate_and_log(&state, &diag)?;
        }
        if state.step >= next_eval || state.step == total {
            run.evaluate_and_log(&state, &diag)?;
            while next_eval <= state.step {
                next_eval += cfg.eval.interval;
            }
        }
    }

    save_checkpoint(
        &out_dir.join(FINAL_CHECKPOINT_FILE),
        &state.net,
        state.step,
        state.phase.number(),
    )?;
    run.summary.steps = state.step;
    run.summary.final_checksum = state.net.checksum();
    fs::write(
        out_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&run.summary).map_err(|e| io::Error::other(e.to_string()))?,
    )?;
    Ok((state.net, run.summary))
}
